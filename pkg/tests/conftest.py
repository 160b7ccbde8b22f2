import numpy as np
import pytest

from fluxmc.forward import ForwardOperator, NoiseSpec, PriorSpec, toy_operator

ACCEPTANCE_LINES = []


@pytest.fixture
def toy():
    """Low-dimensional example settings: eps=0.05, b2=4, sigma2=1, mu=(1/2, 1)."""
    op = toy_operator(0.05)
    return op, NoiseSpec.scalar(1.0, 2), PriorSpec.unit_mean(2, 4.0), np.array([0.5, 1.0])


def random_problem(rng, m, n, explicit=True):
    A = rng.standard_normal((n, m))
    mu = rng.uniform(0.2, 2.0, m) * rng.choice([-1.0, 1.0], m)
    noise = NoiseSpec(rng.uniform(0.3, 3.0, n))
    prior = PriorSpec(rng.standard_normal(m) + 1.0, float(rng.uniform(0.5, 5.0)))
    if explicit:
        op = ForwardOperator.from_matrix(A)
    else:
        op = ForwardOperator.from_callables(lambda v: A @ v, lambda w: A.T @ w, m, n)
    return op, noise, prior, mu, A


@pytest.fixture
def make_problem():
    return random_problem


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
