"""Synthetic experiments: network generation, moment validation, policy
benchmarks, the sample-size convergence study and rank-correlation
prediction scoring.

Every command is a pure function of ``(ExperimentConfig, seed)``.  Random
streams are addressed by position (replicate, run, stage) through
:func:`seeding.child_seed`, so results do not depend on execution order or on
the number of worker processes.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.sparse.csgraph import connected_components

from . import __version__
from .baselines import CentralityCache, cec_policy, cls_policy, exp_policy, opl_policy, rnd_policy
from .hawkes_core import (EventLog, NetworkModel, carry_at_end, fit_mle, simulate_stage,
                          spectral_radius)
from .lstd_control import collect_samples, policy_iteration, run_mitigation
from .mdp_env import MitigationEnv, RewardKind, StageState, shift_blocks, trajectory_to_jsonl
from .moments import MomentContext, count_covariance, window_mean_counts
from .optimize import FeasibleSet
from .seeding import as_seedseq, child_seed, rng

log = logging.getLogger(__name__)

METHODS = ("ltd", "cec", "opl", "cls", "exp", "rnd")
SWEEP_AXES = ("n", "campaign", "p", "delta")

# stream identifiers below the master seed
_NET, _SAMPLES, _EVAL, _RND, _VALIDATE, _PREDICT = range(6)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Law:
    """A scalar distribution: ``uniform(low, high)`` or ``const(value)``.

    ``scale="n"`` multiplies draws by the network size.
    """

    dist: str = "uniform"
    low: float = 0.0
    high: float = 1.0
    scale: str | None = None

    def __post_init__(self):
        if self.dist not in ("uniform", "const"):
            raise ConfigError(f"unknown distribution {self.dist!r}")
        if self.dist == "uniform" and not self.low <= self.high:
            raise ConfigError("uniform law needs low <= high")
        if self.scale not in (None, "n"):
            raise ConfigError(f"unknown scale {self.scale!r}")

    @classmethod
    def const(cls, value: float) -> "Law":
        return cls("const", value, value)

    @classmethod
    def coerce(cls, x) -> "Law":
        if isinstance(x, Law):
            return x
        if isinstance(x, (int, float)):
            return cls.const(float(x))
        if isinstance(x, dict):
            if x.get("dist") == "const":
                return cls("const", float(x["value"]), float(x["value"]), x.get("scale"))
            return cls(x.get("dist", "uniform"), float(x["low"]), float(x["high"]), x.get("scale"))
        raise ConfigError(f"cannot interpret {x!r} as a distribution")

    def to_dict(self) -> dict:
        d = {"dist": "const", "value": self.low} if self.dist == "const" else \
            {"dist": "uniform", "low": self.low, "high": self.high}
        if self.scale:
            d["scale"] = self.scale
        return d

    def sample(self, gen: np.random.Generator, size=None, n: int = 1):
        if self.dist == "const":
            out = np.full(size, self.low) if size is not None else self.low
        else:
            out = gen.uniform(self.low, self.high, size)
        return out * (n if self.scale == "n" else 1)


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of the synthetic experiments; defaults follow the reference setup."""

    n: int = 300
    p: float = 0.02
    omega: float = 1.0
    delta: float = 1.0
    L: int = 2
    delta_f: float | None = None
    gamma: float = 0.7
    K: int = 10
    runs: int = 50
    replicates: int = 1
    n_fake: int = 20
    n_mitigators: int = 20
    alpha_law: Law = Law("uniform", 0.0, 0.5)
    price_law: Law = Law.const(1.0)
    budget_law: Law = Law("uniform", 0.0, 0.5, "n")
    budget_per_stage: bool = True
    rho_law: Law = Law("uniform", 0.3, 0.9)
    mu_law: Law = Law("uniform", 0.0, 0.1)
    samples: int = 1000
    sample_horizon: int = 10
    objective: str = "corr"
    methods: tuple = METHODS
    cec_horizon: int = 2
    m: int = 64
    seed: int = 0
    workers: int = 1
    sweeps: dict = field(default_factory=lambda: {
        "n": [50, 100, 200, 300], "campaign": [5, 10, 20, 40],
        "p": [0.01, 0.02, 0.05, 0.1], "delta": [0.5, 1.0, 2.0, 4.0]})
    # moment validation (small dense model)
    validate: dict = field(default_factory=lambda: {
        "n": 10, "p": 0.5, "rho": 0.5, "mu_low": 1.0, "mu_high": 2.0, "sims": 100,
        "pairs": 4, "t_max": 2.0, "bins": 20, "window": 0.1, "min_pass": 0.95})
    # convergence study
    convergence: dict = field(default_factory=lambda: {
        "sample_sizes": [1, 10, 100, 500, 1000, 2000, 4000, 8000], "rollouts": 100})
    # rank-correlation prediction scoring
    predict: dict = field(default_factory=lambda: {"trajectories": 12})

    def __post_init__(self):
        for name in ("alpha_law", "price_law", "budget_law", "rho_law", "mu_law"):
            object.__setattr__(self, name, Law.coerce(getattr(self, name)))
        methods = self.methods.split(",") if isinstance(self.methods, str) else self.methods
        object.__setattr__(self, "methods", tuple(m.strip().lower() for m in methods))
        object.__setattr__(self, "objective", RewardKind.parse(self.objective).value)
        if self.n < 1 or self.K < 1 or self.L < 1 or self.runs < 1 or self.replicates < 1:
            raise ConfigError("n, K, L, runs and replicates must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("p must lie in [0, 1]")
        if self.omega <= 0 or self.delta <= 0:
            raise ConfigError("omega and delta must be positive")
        if self.delta_f is not None and self.delta_f != self.delta:
            raise ConfigError("only delta_f == delta is supported")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if unknown := set(self.methods) - set(METHODS):
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if not (0.0 <= self.rho_law.low and self.rho_law.high < 1.0):
            raise ConfigError("target spectral radius must lie in [0, 1)")
        for law in (self.alpha_law, self.price_law, self.budget_law, self.mu_law):
            if law.low < 0:
                raise ConfigError("caps, prices, budgets and rates must be nonnegative")
        if self.price_law.low <= 0:
            raise ConfigError("prices must be positive")
        if min(self.n_fake, self.n_mitigators) < 0 or max(self.n_fake, self.n_mitigators) > self.n:
            raise ConfigError("campaign sizes must lie in [0, n]")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = v.to_dict() if isinstance(v, Law) else (list(v) if isinstance(v, tuple) else v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        if unknown := set(d) - names:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        base = cls()
        d = dict(d)
        for key in ("validate", "convergence", "predict", "sweeps"):
            if key in d:
                merged = dict(getattr(base, key))
                merged.update(d[key])
                d[key] = merged
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def hash(self) -> str:
        """Content hash excluding execution-only settings (workers)."""
        d = self.to_dict()
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def artifact_version() -> str:
    """Package version plus a digest of the package sources, ``0.1.0-g1a2b3c4``."""
    h = hashlib.sha1()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}-g{h.hexdigest()[:7]}"


# -- instances ----------------------------------------------------------------

@dataclass
class Instance:
    model: NetworkModel
    feasible: FeasibleSet
    budgets: np.ndarray
    sources: np.ndarray
    mitigators: np.ndarray
    rho_target: float

    def env(self, config: ExperimentConfig) -> MitigationEnv:
        return MitigationEnv(self.model, self.feasible, config.delta, config.L, self.budgets, config.m)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "feasible": self.feasible.to_dict(),
                "budgets": self.budgets.tolist(), "sources": self.sources.tolist(),
                "mitigators": self.mitigators.tolist(), "rho_target": self.rho_target}

    @classmethod
    def from_dict(cls, d) -> "Instance":
        return cls(NetworkModel.from_dict(d["model"]), FeasibleSet.from_dict(d["feasible"]),
                   np.array(d["budgets"], float), np.array(d["sources"], int),
                   np.array(d["mitigators"], int), float(d["rho_target"]))


def _pick_campaigns(gen, n, n_fake, n_mit):
    if n_fake + n_mit <= n:
        perm = gen.permutation(n)
        return np.sort(perm[:n_fake]), np.sort(perm[n_fake:n_fake + n_mit])
    return (np.sort(gen.choice(n, n_fake, replace=False)),
            np.sort(gen.choice(n, n_mit, replace=False)))


_MAX_REDRAWS = 1000


def generate_instance(config: ExperimentConfig, seed) -> Instance:
    """Random network, campaigns, caps, prices and stage budgets.

    Influence edges form a directed Erdos-Renyi graph without self-loops;
    kept weights are rescaled so that ``rho(A / omega)`` hits a target drawn
    from ``rho_law``.  A user follows the accounts that influence them, so
    ``B = I + [A.T > 0]``.  Acyclic draws (``rho = 0``) cannot be rescaled
    and are redrawn.  Fake sources and mitigators are disjoint when they
    fit in the network.
    """
    if config.n_mitigators == 0:
        raise ConfigError("the mitigator set is empty")
    n = config.n
    gen = np.random.default_rng(as_seedseq(seed))
    # acyclic draws have rho = 0 and cannot be rescaled to the target; redraw them
    for _ in range(_MAX_REDRAWS):
        mask = gen.random((n, n)) < config.p
        np.fill_diagonal(mask, False)
        A = np.where(mask, gen.uniform(0.0, 0.5, (n, n)), 0.0)
        n_comp, _ = connected_components(mask, directed=True, connection="strong")
        if n_comp < n or config.p == 0.0 or n == 1:
            break
    else:
        log.warning("no cyclic influence graph in %d draws; keeping rho = 0", _MAX_REDRAWS)
    rho = spectral_radius(A, config.omega) if n_comp < n else 0.0
    rho_target = float(config.rho_law.sample(gen))
    if rho > 0:
        A *= rho_target / rho
    B = np.eye(n) + (A.T > 0)
    sources, mitigators = _pick_campaigns(gen, n, config.n_fake, config.n_mitigators)
    mu_F = np.zeros(n)
    mu_M = np.zeros(n)
    mu_F[sources] = config.mu_law.sample(gen, len(sources), n)
    mu_M[mitigators] = config.mu_law.sample(gen, len(mitigators), n)
    alpha = config.alpha_law.sample(gen, n, n)
    c = config.price_law.sample(gen, n, n)
    n_budgets = config.K if config.budget_per_stage else 1
    budgets = np.atleast_1d(config.budget_law.sample(gen, n_budgets, n))
    in_mit = np.zeros(n, bool)
    in_mit[mitigators] = True
    model = NetworkModel(A, config.omega, mu_F, mu_M, B)
    fs = FeasibleSet(c, float(budgets[0]), alpha, in_mit)
    return Instance(model, fs, budgets, sources, mitigators, rho_target)


def generate_network(config: ExperimentConfig, seed) -> NetworkModel:
    return generate_instance(config, seed).model


# -- output helpers -----------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header, rows) -> str:
    """Write rows (sorted by the caller) with ``repr`` floats; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def _tags(config: ExperimentConfig, seed) -> list:
    return [config.hash(), artifact_version(), int(seed)]


TAG_COLUMNS = ["config_hash", "version", "seed"]


def _pool_map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


# -- moment validation --------------------------------------------------------

@dataclass
class ValidationResult:
    rows: list
    pass_fraction: float
    passed: bool


def _validation_model(config: ExperimentConfig, seed) -> NetworkModel:
    v = config.validate
    vc = config.replace(n=int(v["n"]), p=float(v["p"]), rho_law=Law.const(float(v["rho"])),
                        n_fake=0, n_mitigators=1)
    inst = generate_instance(vc, child_seed(as_seedseq(seed), _VALIDATE, 0))
    gen = rng(as_seedseq(seed), _VALIDATE, 1)
    mu = gen.uniform(float(v["mu_low"]), float(v["mu_high"]), vc.n)
    return NetworkModel(inst.model.A, config.omega, mu, np.zeros(vc.n), inst.model.B)


def validate_moments(config: ExperimentConfig, seed, model: NetworkModel | None = None) -> ValidationResult:
    """Binned ``E[dN_i(t) dN_j(0)]``: closed form against simulation.

    The process starts empty at time 0.  For each pair the reference window is
    ``[0, w)`` on node ``j`` and ``(0, t_max]`` is split into equal bins on
    node ``i``.  Theory integrates the exact second-order measure over each
    (bin x window) cell; the empirical mean averages ``N_i(bin) N_j(window)``,
    both divided by the cell area.
    """
    v = config.validate
    root = as_seedseq(seed)
    model = _validation_model(config, seed) if model is None else model
    n = model.n
    sims, n_pairs, bins = int(v["sims"]), int(v["pairs"]), int(v["bins"])
    t_max, w = float(v["t_max"]), float(v["window"])
    gen = rng(root, _VALIDATE, 2)
    pairs = [(int(gen.integers(n)), int(gen.integers(n))) for _ in range(n_pairs)]
    edges = np.linspace(0.0, t_max, bins + 1)
    ctx = MomentContext(model.A, model.omega, t_max, config.m)
    mu = model.mu_F
    J = (0.0, w)
    mJ = window_mean_counts(ctx, mu, None, *J)
    theory = np.empty((n_pairs, bins))
    for b in range(bins):
        I = (edges[b], edges[b + 1])
        cov = count_covariance(ctx, mu, None, I, J)
        mI = window_mean_counts(ctx, mu, None, *I)
        second = cov + np.outer(mI, mJ)
        area = (I[1] - I[0]) * w
        for k, (i, j) in enumerate(pairs):
            theory[k, b] = second[i, j] / area
    prods = np.empty((sims, n_pairs, bins))
    for s in range(sims):
        lg = simulate_stage(model, "F", None, None, (0.0, t_max), rng(root, _VALIDATE, 3, s))
        nJ = np.bincount(lg.nodes[lg.times < w], minlength=n)
        binned = np.zeros((n, bins))
        if len(lg):
            b_idx = np.minimum(np.searchsorted(edges, lg.times, side="right") - 1, bins - 1)
            np.add.at(binned, (lg.nodes, b_idx), 1.0)
        for k, (i, j) in enumerate(pairs):
            prods[s, k] = binned[i] * nJ[j] / (np.diff(edges) * w)
    emp_mean = prods.mean(axis=0)
    emp_sd = prods.std(axis=0, ddof=1) if sims > 1 else np.zeros_like(emp_mean)
    # one-count resolution floor for cells that never fired
    floor = 1.0 / ((t_max / bins) * w * sims)
    se = np.maximum(emp_sd / np.sqrt(sims), floor)
    ok = np.abs(theory - emp_mean) <= 3.0 * se
    rows = []
    for k, (i, j) in enumerate(pairs):
        for b in range(bins):
            rows.append([f"{i}-{j}", 0.5 * (edges[b] + edges[b + 1]), theory[k, b],
                         emp_mean[k, b], emp_sd[k, b], bool(ok[k, b])])
    frac = float(ok.mean())
    return ValidationResult(rows, frac, frac >= float(v["min_pass"]))


def cmd_validate_moments(config: ExperimentConfig, seed, out=None) -> int:
    res = validate_moments(config, seed)
    header = ["pair", "t_bin", "theory", "emp_mean", "emp_sd", "within_3se"] + TAG_COLUMNS
    rows = [r + _tags(config, seed) for r in res.rows]
    write_csv(None if out is None else Path(out) / "moments.csv", header, rows)
    log.info("moment band test: %.1f%% of bins within 3 SE", 100 * res.pass_fraction)
    return 0 if res.passed else 1


# -- policies -----------------------------------------------------------------

def train_policy(env: MitigationEnv, config: ExperimentConfig, seed, kind=None, S: int | None = None):
    """LSTD policy iteration on states visited by random-behavior rollouts."""
    kind = config.objective if kind is None else kind
    S = config.samples if S is None else S
    root = as_seedseq(seed)
    states = collect_samples(env, S, config.sample_horizon, child_seed(root, 0))
    return policy_iteration(env, states, kind, config.gamma, seed=child_seed(root, 1))


def method_policy(method: str, env: MitigationEnv, config: ExperimentConfig, kind, cache=None,
                  ltd=None, rnd_seed=None):
    """A callable ``state -> u`` for one of the comparison methods."""
    kind = RewardKind.parse(kind)
    if method == "ltd":
        return ltd
    if method == "rnd":
        gen = np.random.default_rng(rnd_seed)
        return lambda x: rnd_policy(env.feasible(x.k), gen)
    if method == "cls":
        return lambda x: cls_policy(cache, env.feasible(x.k))
    if method == "exp":
        return lambda x: exp_policy(cache, x, env.model.B, env.feasible(x.k))
    if method == "cec":
        return lambda x: cec_policy(env, kind, x, config.gamma, config.cec_horizon)
    if method == "opl":
        U = opl_policy(env, kind, config.K, config.gamma)
        return lambda x: U[x.k]
    raise ConfigError(f"unknown method {method!r}")


# -- benchmark ----------------------------------------------------------------

def _benchmark_replicate(task):
    config, seed, axis, value, r = task
    root = as_seedseq(seed)
    inst = generate_instance(config, child_seed(root, _NET, r))
    env = inst.env(config)
    kind = config.objective
    cache = CentralityCache(inst.model.B)
    methods = list(config.methods) + ([] if "rnd" in config.methods else ["rnd"])
    ltd = None
    if "ltd" in methods:
        try:
            ltd = train_policy(env, config, child_seed(root, _SAMPLES, r))
        except Exception as exc:  # recorded per row below
            ltd = exc
    eval_root = child_seed(root, _EVAL, r)
    out = {}
    for method in methods:
        try:
            if isinstance(ltd, Exception) and method == "ltd":
                raise ltd
            totals = []
            for run in range(config.runs):
                pol = method_policy(method, env, config, kind, cache, ltd,
                                    rnd_seed=child_seed(root, _RND, r, run))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    ro = run_mitigation(env, pol, config.K, eval_root, config.gamma, kind, run)
                totals.append(ro.total)
            out[method] = (np.array(totals), "ok")
        except Exception as exc:
            log.warning("method %s failed on replicate %d: %s", method, r, exc)
            out[method] = (np.full(config.runs, np.nan), f"error: {type(exc).__name__}: {exc}")
    return axis, value, r, out


def _sweep_configs(config: ExperimentConfig, axis: str | None):
    if axis is None:
        return [(None, None, config)]
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    res = []
    for v in config.sweeps[axis]:
        if axis == "n":
            kw = {"n": int(v), "n_fake": min(config.n_fake, int(v)),
                  "n_mitigators": min(config.n_mitigators, int(v))}
        elif axis == "campaign":
            kw = {"n_fake": int(v), "n_mitigators": int(v)}
        elif axis == "p":
            kw = {"p": float(v)}
        else:
            kw = {"delta": float(v), "delta_f": None}
        res.append((axis, v, config.replace(**kw)))
    return res


@dataclass
class BenchmarkResult:
    rows: list
    run_rows: list
    totals: dict  # (axis value, replicate, method) -> per-run totals


def benchmark(config: ExperimentConfig, seed, sweep: str | None = None) -> BenchmarkResult:
    """Train LTD and evaluate every method with common random numbers.

    Evaluation run ``run`` of replicate ``r`` uses the same per-stage
    simulator seeds for all methods.  RND is always evaluated because the
    ratios are taken against it.
    """
    tasks = [(cfg, seed, axis, value, r) for axis, value, cfg in _sweep_configs(config, sweep)
             for r in range(cfg.replicates)]
    results = _pool_map(_benchmark_replicate, tasks, config.workers)
    rows, run_rows, totals = [], [], {}
    for axis, value, r, out in results:
        rnd_mean = float(np.mean(out["rnd"][0]))
        for method, (tot, status) in out.items():
            mean = float(np.mean(tot))
            ratio = mean / rnd_mean if rnd_mean != 0 and np.isfinite(mean) else float("nan")
            sd = float(np.std(tot, ddof=1)) if len(tot) > 1 else 0.0
            rows.append([axis or "", "" if value is None else value, r, method, config.objective,
                         mean, sd, ratio, status])
            totals[(value, r, method)] = tot
            for run, t in enumerate(tot):
                run_rows.append([axis or "", "" if value is None else value, r, method, run, t])
    order = {m: i for i, m in enumerate(METHODS)}
    rows.sort(key=lambda x: (str(x[1]), x[2], order[x[3]]))
    run_rows.sort(key=lambda x: (str(x[1]), x[2], order[x[3]], x[4]))
    return BenchmarkResult(rows, run_rows, totals)


def cmd_benchmark(config: ExperimentConfig, seed, out=None, sweep=None) -> int:
    res = benchmark(config, seed, sweep)
    header = ["sweep", "value", "replicate", "method", "objective", "total_mean", "total_sd",
              "ratio_vs_rnd", "status"] + TAG_COLUMNS
    tags = _tags(config, seed)
    write_csv(None if out is None else Path(out) / "benchmark.csv", header,
              [r + tags for r in res.rows])
    write_csv(None if out is None else Path(out) / "benchmark_runs.csv",
              ["sweep", "value", "replicate", "method", "run", "total"] + TAG_COLUMNS,
              [r + tags for r in res.run_rows])
    return 0


# -- convergence --------------------------------------------------------------

def _convergence_replicate(task):
    config, seed, r = task
    root = as_seedseq(seed)
    inst = generate_instance(config, child_seed(root, _NET, r))
    env = inst.env(config)
    rollouts = int(config.convergence["rollouts"])
    rows = []
    for S in config.convergence["sample_sizes"]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pol = train_policy(env, config, child_seed(root, _SAMPLES, r, int(S)), S=int(S))
            # evaluation seeds are shared across sample sizes
            totals = np.array([run_mitigation(env, pol, config.K, child_seed(root, _EVAL, r),
                                              config.gamma, config.objective, run).total
                               for run in range(rollouts)])
        estimate = float(pol.w[-1])  # psi(zero state) = (0, ..., 0, 1)
        emp_mean = float(totals.mean())
        emp_sd = float(totals.std(ddof=1)) if rollouts > 1 else 0.0
        rows.append([r, int(S), estimate, emp_mean, emp_sd, abs(estimate - emp_mean),
                     len(pol.history), bool(pol.converged)])
    return rows


def convergence(config: ExperimentConfig, seed) -> list:
    tasks = [(config, seed, r) for r in range(config.replicates)]
    rows = [row for part in _pool_map(_convergence_replicate, tasks, config.workers) for row in part]
    rows.sort(key=lambda x: (x[0], x[1]))
    return rows


def cmd_convergence(config: ExperimentConfig, seed, out=None) -> int:
    rows = convergence(config, seed)
    header = ["replicate", "S", "estimate", "emp_mean", "emp_sd", "abs_error", "iterations",
              "converged"] + TAG_COLUMNS
    tags = _tags(config, seed)
    write_csv(None if out is None else Path(out) / "convergence.csv", header, [r + tags for r in rows])
    return 0


def trend_test(S, err, alpha: float = 0.05) -> tuple[float, float, bool]:
    """One-sided Kendall test that ``err`` does not increase with ``S``.

    Returns ``(tau, p_increasing, ok)``; ``ok`` is False only when an
    increasing trend is significant at level ``alpha``.
    """
    res = stats.kendalltau(S, err, alternative="greater")
    tau = float(res.statistic) if np.isfinite(res.statistic) else 0.0
    p = float(res.pvalue) if np.isfinite(res.pvalue) else 1.0
    return tau, p, p >= alpha


# -- rank-correlation prediction scoring ---------------------------------------

def spearman(a, b) -> float:
    """Spearman correlation with average ranks for ties; 0 for a constant list."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    ra, rb = stats.rankdata(a), stats.rankdata(b)
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        return 0.0
    return float(np.corrcoef(ra, rb)[0, 1])


def _predict_replicate(task):
    config, seed, r = task
    root = as_seedseq(seed)
    inst = generate_instance(config, child_seed(root, _NET, r))
    env = inst.env(config)
    kind = config.objective
    n = env.n
    cache = CentralityCache(inst.model.B)
    n_traj = int(config.predict["trajectories"])
    # trajectories under the random policy
    trajs = []
    for t in range(n_traj):
        pol = method_policy("rnd", env, config, kind, rnd_seed=child_seed(root, _PREDICT, r, t))
        ro = run_mitigation(env, pol, config.K, child_seed(root, _PREDICT, r, n_traj + t),
                            config.gamma, kind, 0, keep_logs=True)
        trajs.append(ro)
    objective = np.array([ro.total for ro in trajs])
    # exogenous mitigation intensity inferred from each trajectory (A known)
    mu_hat = []
    for ro in trajs:
        logs, carries = [], []
        y = np.zeros(n)
        for rec in ro.records:
            log_M = rec.logs[0]
            logs.append(log_M)
            carries.append(y)
            y = carry_at_end(inst.model, log_M, "M", y)
        fit = fit_mle(logs, n, config.omega, "M", carries, A_fixed=inst.model.A)
        mu_hat.append(fit.mu)
    ltd = None
    if "ltd" in config.methods:
        ltd = train_policy(env, config, child_seed(root, _SAMPLES, r))
    rows = []
    for method in config.methods:
        mse = np.empty(n_traj)
        for t, ro in enumerate(trajs):
            pol = method_policy(method, env, config, kind, cache, ltd,
                                rnd_seed=child_seed(root, _RND, r, t))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                states = _replay_states(env, ro)
                prescribed = np.mean([pol(x) for x in states], axis=0)
            mit = inst.mitigators
            mse[t] = float(np.mean((inst.model.mu_M[mit] + prescribed[mit] - mu_hat[t][mit]) ** 2))
        # close to the prescription should mean high objective
        rows.append([r, method, spearman(objective, -mse)])
    return rows


def _replay_states(env: MitigationEnv, ro):
    """Observed states along a recorded trajectory."""
    x = env.zero_state()
    out = []
    for rec in ro.records:
        out.append(x)
        log_M, log_F = rec.logs
        x = StageState(x.k + 1, carry_at_end(env.model, log_M, "M", x.y_M),
                       carry_at_end(env.model, log_F, "F", x.y_F),
                       shift_blocks(x.z_M, rec.z_M), shift_blocks(x.z_F, rec.z_F), log_M.t_end)
    return out


def predict_rank(config: ExperimentConfig, seed) -> list:
    tasks = [(config, seed, r) for r in range(config.replicates)]
    rows = [row for part in _pool_map(_predict_replicate, tasks, config.workers) for row in part]
    order = {m: i for i, m in enumerate(METHODS)}
    rows.sort(key=lambda x: (x[0], order[x[1]]))
    return rows


def cmd_predict_rank(config: ExperimentConfig, seed, out=None) -> int:
    rows = predict_rank(config, seed)
    tags = _tags(config, seed)
    write_csv(None if out is None else Path(out) / "predict_rank.csv",
              ["replicate", "method", "spearman"] + TAG_COLUMNS, [r + tags for r in rows])
    return 0


# -- single-network commands ----------------------------------------------------

def cmd_gen_network(config: ExperimentConfig, seed, out=None) -> int:
    inst = generate_instance(config, child_seed(as_seedseq(seed), _NET, 0))
    d = inst.to_dict()
    d.update(config_hash=config.hash(), version=artifact_version(), seed=int(seed))
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "network.json").write_text(json.dumps(d, sort_keys=True))
    return 0


def cmd_train(config: ExperimentConfig, seed, out=None) -> int:
    root = as_seedseq(seed)
    inst = generate_instance(config, child_seed(root, _NET, 0))
    env = inst.env(config)
    pol = train_policy(env, config, child_seed(root, _SAMPLES, 0))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "network.json").write_text(json.dumps(inst.to_dict(), sort_keys=True))
        (out / "policy.json").write_text(pol.to_json())
        lines = [json.dumps({"iteration": i + 1, "dw": dw, "config_hash": config.hash(),
                             "version": artifact_version(), "seed": int(seed)})
                 for i, dw in enumerate(pol.history)]
        (out / "training.jsonl").write_text("".join(x + "\n" for x in lines))
    return 0 if pol.converged else 1


def cmd_simulate(config: ExperimentConfig, seed, out=None) -> int:
    """Closed-loop rollout of the first configured method on replicate 0."""
    root = as_seedseq(seed)
    inst = generate_instance(config, child_seed(root, _NET, 0))
    env = inst.env(config)
    method = config.methods[0]
    ltd = train_policy(env, config, child_seed(root, _SAMPLES, 0)) if method == "ltd" else None
    pol = method_policy(method, env, config, config.objective, CentralityCache(inst.model.B), ltd,
                        rnd_seed=child_seed(root, _RND, 0, 0))
    ro = run_mitigation(env, pol, config.K, child_seed(root, _EVAL, 0), config.gamma,
                        config.objective, 0, keep_logs=True)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trajectory.jsonl").write_text(trajectory_to_jsonl(ro.records))
        events = EventLog.merge([lg for rec in ro.records for lg in rec.logs])
        (out / "events.jsonl").write_text(events.to_jsonl())
    return 0
