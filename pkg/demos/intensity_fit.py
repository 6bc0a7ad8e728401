"""
Recovering influence weights from event logs
=============================================

Maximum-likelihood fit of the base rates and influence matrix from many
independent observation windows.
"""
import numpy as np

from hawkes_mitigation import NetworkModel, fit_mle, simulate_stage, spectral_radius

rng = np.random.default_rng(5)
A = rng.uniform(0.05, 0.3, (3, 3))
A *= 0.6 / spectral_radius(A)
truth = NetworkModel(A, 1.0, mu_F=rng.uniform(0.5, 1.0, 3), mu_M=np.zeros(3))

logs = [simulate_stage(truth, "F", None, None, (0.0, 10.0), s) for s in range(300)]
print("events observed:", sum(len(lg) for lg in logs))

fit = fit_mle(logs, 3, omega=1.0, tag="F")
print("log-likelihood %.1f -> %.1f in %d iterations" % (fit.initial_loglik, fit.loglik, fit.n_iter))
print("true A:\n", np.round(A, 3))
print("fitted A:\n", np.round(fit.A, 3))
print("true mu:", np.round(truth.mu_F, 3), " fitted mu:", np.round(fit.mu, 3))
