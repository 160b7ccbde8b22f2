r"""
Matrix-free operators and the variational solver
================================================

When the forward model is only available as a simulator, register its
forward and adjoint maps. The adjoint is probed at registration, and the MAP
estimate comes from L-BFGS on the 4D-Var cost.
"""

import numpy as np

from fluxmc import (ForwardOperator, NoiseSpec, PriorSpec, map_estimator, minimize, posterior_covariance,
                    synthetic_operator)
from fluxmc.errors import AdjointMismatchError
from fluxmc.solver import VariationalProblem

A = synthetic_operator(50, 80, smoothness=1.5, seed=3).matrix
op = ForwardOperator.from_callables(lambda v: A @ v, lambda w: A.T @ w, m=50, n=80)

###############################################################################
# A slightly wrong adjoint is caught immediately.

B = A + 1e-7 * np.random.default_rng(0).standard_normal(A.shape)
try:
    ForwardOperator.from_callables(lambda v: A @ v, lambda w: B.T @ w, m=50, n=80)
except AdjointMismatchError as exc:
    print("rejected:", exc)

###############################################################################
# Solve one member problem and compare with the closed form.

rng = np.random.default_rng(1)
mu = rng.uniform(0.5, 2.0, 50)
prior = PriorSpec.unit_mean(50, 2.25)
noise = NoiseSpec.scalar(0.25, 80)
c_k = 1 + 1.5 * rng.standard_normal(50)
y_k = A @ mu + 0.5 * rng.standard_normal(80)

report = minimize(c_k, VariationalProblem(op, noise, prior, mu, c_k, y_k))
explicit = ForwardOperator.from_matrix(A)
exact = map_estimator(explicit, noise, c_k, y_k, prior, mu, posterior_covariance(explicit, noise, prior, mu))
print(f"{report.iterations} iterations, converged={report.converged}")
print(f"relative error vs closed form {np.linalg.norm(report.solution - exact) / np.linalg.norm(exact):.2e}")
