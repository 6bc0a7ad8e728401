"""Competing Hawkes campaigns on a network: moments, simulation and mitigation control."""
from .hawkes_core import (EventLog, FitResult, HistoryCarry, NetworkModel, UnstableModelError,
                          carry_at_end, compensator, conditional_intensity, fit_mle,
                          log_likelihood, simulate_stage, spectral_radius)
from .moments import (MomentContext, count_covariance, intensity_covariance, mean_intensity,
                      response_function, second_order_density, stage_mean_counts,
                      stage_second_moment)
from .optimize import FeasibleSet, grid_search, project_feasible, solve_concave_qp, solve_linear
from .mdp_env import (MitigationEnv, RewardKind, StageState, expected_reward, features,
                      realized_reward, step)
from .lstd_control import (Policy, collect_samples, expected_next_value, policy_evaluation,
                           policy_improvement,
                           policy_iteration, run_mitigation)
from .baselines import (CentralityCache, cec_policy, cls_policy, exp_policy, opl_policy,
                        rnd_policy)

__version__ = "0.1.0"
