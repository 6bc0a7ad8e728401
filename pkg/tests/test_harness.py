import csv
import io
import json

import numpy as np
import pytest
from scipy import stats

from hawkes_mitigation import spectral_radius
from hawkes_mitigation.cli import COMMANDS, main
from hawkes_mitigation.harness import (TAG_COLUMNS, ConfigError, ExperimentConfig, Law, benchmark,
                                       convergence, generate_instance, generate_network,
                                       predict_rank, spearman, trend_test, validate_moments,
                                       write_csv)

TINY = dict(n=12, p=0.2, n_fake=3, n_mitigators=3, runs=3, samples=40, K=3, replicates=1,
            mu_law={"dist": "uniform", "low": 0.3, "high": 0.6},
            convergence={"sample_sizes": [1, 20], "rollouts": 4},
            validate={"sims": 20, "bins": 5}, predict={"trajectories": 12}, m=24)


@pytest.fixture
def tiny():
    return ExperimentConfig.from_dict(TINY)


# -- configuration ------------------------------------------------------------------

def test_defaults_match_reference_setup():
    c = ExperimentConfig()
    assert (c.n, c.p, c.omega, c.delta, c.gamma, c.L, c.K, c.runs, c.samples) == \
        (300, 0.02, 1.0, 1.0, 0.7, 2, 10, 50, 1000)
    assert (c.n_fake, c.n_mitigators) == (20, 20)
    assert c.alpha_law == Law("uniform", 0.0, 0.5) and c.price_law == Law.const(1.0)
    assert c.budget_law.scale == "n" and c.budget_law.high == 0.5


def test_config_roundtrip_and_hash(tiny):
    back = ExperimentConfig.from_json(tiny.to_json())
    assert back == tiny and back.hash() == tiny.hash()
    assert tiny.replace(workers=4).hash() == tiny.hash()
    assert tiny.replace(seed=1).hash() != tiny.hash()


@pytest.mark.parametrize("bad", [{"K": 0}, {"p": 1.5}, {"methods": "ltd,foo"}, {"nope": 1},
                                 {"rho_law": {"dist": "uniform", "low": 0.5, "high": 1.2}},
                                 {"delta_f": 2.0}, {"gamma": 1.5}])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TINY, **bad})


def test_law_sampling():
    gen = np.random.default_rng(0)
    x = Law("uniform", 0.0, 0.5, "n").sample(gen, 1000, n=10)
    assert x.min() >= 0 and x.max() <= 5 and abs(x.mean() - 2.5) < 0.2
    assert np.all(Law.const(2.0).sample(gen, 4) == 2.0)


# -- network generation -------------------------------------------------------------

def test_empty_graph(tiny):
    m = generate_network(tiny.replace(p=0.0), 0)
    assert not m.A.any() and np.array_equal(m.B, np.eye(12))


def test_spectral_radius_hits_target(tiny):
    for s in range(5):
        inst = generate_instance(tiny.replace(p=0.4), s)
        assert abs(spectral_radius(inst.model.A, 1.0) - inst.rho_target) < 1e-6
        assert 0.3 <= inst.rho_target <= 0.9


def test_edge_density(tiny):
    cfg = tiny.replace(n=20, p=0.1)
    dens = [(generate_network(cfg, s).A > 0).sum() / (20 * 19) for s in range(100)]
    se = np.sqrt(0.1 * 0.9 / (20 * 19 * 100))
    assert abs(np.mean(dens) - 0.1) < 3 * se


def test_instance_structure(tiny):
    inst = generate_instance(tiny, 7)
    m = inst.model
    assert len(set(inst.sources) & set(inst.mitigators)) == 0
    assert np.all((m.mu_F > 0) == np.isin(np.arange(12), inst.sources))
    assert np.array_equal(inst.feasible.mask, np.isin(np.arange(12), inst.mitigators))
    assert np.array_equal(m.B, np.eye(12) + (m.A.T > 0))
    assert len(inst.budgets) == tiny.K and np.all(inst.budgets <= 0.5 * 12)
    again = generate_instance(tiny, 7)
    assert np.array_equal(again.model.A, m.A)


def test_empty_mitigators(tiny):
    with pytest.raises(ConfigError):
        generate_instance(tiny.replace(n_mitigators=0), 0)


# -- tables -------------------------------------------------------------------------

def test_write_csv_roundtrip(tmp_path):
    text = write_csv(tmp_path / "a.csv", ["x", "y"], [[0.1, 2], [1 / 3, 3]])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["x", "y"] and float(rows[2][0]) == 1 / 3
    assert (tmp_path / "a.csv").read_text() == text


def test_rnd_only_ratios(tiny):
    res = benchmark(tiny.replace(methods=("rnd",)), 0)
    assert len(res.rows) == 1 and res.rows[0][7] == 1.0 and res.rows[0][-1] == "ok"
    assert len(res.run_rows) == tiny.runs


def test_benchmark_shares_evaluation_seeds(tiny):
    res = benchmark(tiny.replace(methods=("cls", "exp", "rnd")), 3)
    assert {r[3] for r in res.rows} == {"cls", "exp", "rnd"}
    assert all(np.isfinite(t).all() for t in res.totals.values())


def test_sweep_axis(tiny):
    cfg = tiny.replace(methods=("rnd",), sweeps={"campaign": [1, 2]})
    res = benchmark(cfg, 0, sweep="campaign")
    assert [r[1] for r in res.rows] == [1, 2]
    with pytest.raises(ConfigError):
        benchmark(cfg, 0, sweep="bogus")


def test_degenerate_convergence(tiny):
    rows = convergence(tiny, 0)
    assert [r[1] for r in rows] == [1, 20]
    assert all(np.isfinite(r[2]) and r[5] >= 0 for r in rows)


def test_trend_test():
    S = np.repeat([1, 10, 100, 1000], 5)
    assert trend_test(S, 1.0 / S)[2]
    assert not trend_test(S, S.astype(float))[2]
    assert trend_test(S, np.ones(len(S)))[2]


def test_spearman_ties():
    assert spearman([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3], [0, 0, 0]) == 0.0
    assert spearman([1, 1, 2, 3], [1, 2, 3, 4]) == pytest.approx(stats.spearmanr([1, 1, 2, 3], [1, 2, 3, 4])[0])


def test_predict_rank_rows(tiny):
    cfg = tiny.replace(methods=("cls", "rnd"))
    rows = predict_rank(cfg, 0)
    assert [r[1] for r in rows] == ["cls", "rnd"] and all(-1 <= r[2] <= 1 for r in rows)
    ranks = stats.rankdata(np.random.default_rng(0).normal(size=12))
    assert sorted(ranks) == list(range(1, 13))


def test_validate_moments_poisson(tiny):
    cfg = tiny.replace(validate={**tiny.validate, "rho": 0.0, "sims": 40})
    res = validate_moments(cfg, 0)
    # without excitation the cross density is the product of the rates
    assert res.passed and len(res.rows) == cfg.validate["pairs"] * cfg.validate["bins"]


# -- command line -------------------------------------------------------------------

def run_all(tmp, config_path):
    codes = {}
    for cmd in sorted(COMMANDS):
        codes[cmd] = main([cmd, "--config", str(config_path), "--seed", "5", "--out", str(tmp / cmd)])
    return codes


def test_cli_byte_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "methods": ["ltd", "cec", "opl", "cls", "exp", "rnd"]}))
    a = run_all(tmp_path / "a", cfg)
    b = run_all(tmp_path / "b", cfg)
    assert a == b and all(c in (0, 1) for c in a.values())
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) >= 9
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_csv_tags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "methods": "rnd"}))
    assert main(["benchmark", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "benchmark.csv")))
    assert list(rows[0])[-3:] == TAG_COLUMNS and rows[0]["seed"] == "1"
    assert main(["validate-moments", "--config", str(cfg), "--out", str(tmp_path)]) in (0, 1)
    header = open(tmp_path / "moments.csv").readline().strip().split(",")
    assert header[:5] == ["pair", "t_bin", "theory", "emp_mean", "emp_sd"]


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"K": 0}))
    assert main(["train", "--config", str(bad)]) == 2
    assert main(["train", "--seed", str(2 ** 64)]) == 2
    assert main(["train", "--sweep", "n"]) == 2
    with pytest.raises(SystemExit):
        main(["bogus"])
