import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxmc.errors import DefinitenessError, DimensionError
from fluxmc.forward import ForwardOperator
from fluxmc.hadamard import (ScaledOperatorView, hadamard, materialize_scaled, scaled_adjoint_apply,
                             scaled_apply, scaled_gram)

from .oracles import materialized_scaled, rel_err

TOL = 1e-12
dims = st.integers(1, 64)
seeds = st.integers(0, 2**32 - 1)
PROPS = settings(max_examples=200, deadline=None)


def test_hadamard_examples():
    np.testing.assert_array_equal(hadamard([1, 2], [3, 4]), [3, 8])
    a = np.random.default_rng(0).standard_normal(7)
    np.testing.assert_array_equal(hadamard(a, np.ones(7)), a)


def test_hadamard_matches_index_loop():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(50), rng.standard_normal(50)
    expected = [a[i] * b[i] for i in range(50)]
    np.testing.assert_array_equal(hadamard(a, b), expected)


def test_hadamard_length_mismatch():
    with pytest.raises(DimensionError):
        hadamard([1, 2], [1, 2, 3])


def test_scaled_apply_examples():
    np.testing.assert_allclose(scaled_apply(np.eye(2), [0.5, 1], [2, 3]), [1, 3])
    rng = np.random.default_rng(2)
    A, c = rng.standard_normal((4, 3)), rng.standard_normal(3)
    np.testing.assert_allclose(scaled_apply(A, np.ones(3), c), A @ c, rtol=1e-14)
    mu = rng.standard_normal(3)
    assert rel_err(scaled_apply(A, mu, c), materialized_scaled(A, mu) @ c) < TOL
    with pytest.raises(DimensionError):
        scaled_apply(A, mu, np.ones(4))


def test_scaled_adjoint_examples():
    np.testing.assert_allclose(scaled_adjoint_apply(np.eye(2), [0.5, 1], [2, 2]), [1, 2])
    rng = np.random.default_rng(3)
    A, w, mu = rng.standard_normal((5, 3)), rng.standard_normal(5), rng.standard_normal(3)
    np.testing.assert_allclose(scaled_adjoint_apply(A, np.ones(3), w), A.T @ w, rtol=1e-14)
    assert rel_err(scaled_adjoint_apply(A, mu, w), materialized_scaled(A, mu).T @ w) < TOL
    with pytest.raises(DimensionError):
        scaled_adjoint_apply(A, mu, np.ones(3))


def test_scaled_gram_examples():
    np.testing.assert_allclose(scaled_gram(np.eye(2), [1, 1], [0.5, 1]), np.diag([0.25, 1]))
    rng = np.random.default_rng(4)
    A, w = rng.standard_normal((5, 3)), rng.uniform(0.5, 2, 5)
    np.testing.assert_allclose(scaled_gram(A, w, np.ones(3)), A.T @ np.diag(w) @ A, rtol=1e-13)
    mu = rng.standard_normal(3)
    Amu = materialized_scaled(A, mu)
    assert rel_err(scaled_gram(A, w, mu), Amu.T @ np.diag(w) @ Amu) < TOL
    with pytest.raises(DefinitenessError):
        scaled_gram(A, np.r_[w[:-1], 0.0], mu)


def test_view_is_lazy_and_matches_explicit():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((6, 4))
    mu = rng.standard_normal(4)
    calls = []
    op = ForwardOperator.from_callables(lambda v: (calls.append(1), A @ v)[1], lambda w: A.T @ w, 4, 6)
    calls.clear()
    view = ScaledOperatorView(op, mu)
    c, w = rng.standard_normal(4), rng.standard_normal(6)
    assert rel_err(view.apply(c), materialize_scaled(A, mu) @ c) < TOL
    assert rel_err(view.adjoint(w), materialize_scaled(A, mu).T @ w) < TOL
    assert len(calls) == 1 and (view.m, view.n) == (4, 6)


# ---- Hadamard-product identities, 200 random cases each

@PROPS
@given(m=dims, N=st.integers(1, 40), seed=seeds)
def test_mean_commutes_with_hadamard(m, N, seed):
    rng = np.random.default_rng(seed)
    X, a = rng.standard_normal((N, m)), rng.standard_normal(m)
    assert rel_err((X * a).mean(axis=0), X.mean(axis=0) * a) < TOL


@PROPS
@given(m=dims, N=st.integers(2, 40), seed=seeds)
def test_sample_covariance_of_scaled_draws(m, N, seed):
    rng = np.random.default_rng(seed)
    X, a = rng.standard_normal((N, m)), rng.standard_normal(m)
    S = np.atleast_2d(np.cov(X, rowvar=False))
    S_scaled = np.atleast_2d(np.cov(X * a, rowvar=False))
    assert rel_err(S_scaled, S * np.outer(a, a)) < TOL


@PROPS
@given(m=dims, n=dims, seed=seeds)
def test_gram_of_scaled_operator(m, n, seed):
    rng = np.random.default_rng(seed)
    A, mu = rng.standard_normal((n, m)), rng.standard_normal(m)
    Amu = materialized_scaled(A, mu)
    assert rel_err(scaled_gram(A, np.ones(n), mu), Amu.T @ Amu) < TOL


@PROPS
@given(m=dims, n=dims, seed=seeds)
def test_weighted_gram_with_spd_weight(m, n, seed):
    rng = np.random.default_rng(seed)
    A, mu = rng.standard_normal((n, m)), rng.standard_normal(m)
    G = rng.standard_normal((n, n))
    W = G @ G.T + n * np.eye(n)
    Amu = materialized_scaled(A, mu)
    assert rel_err((A.T @ W @ A) * np.outer(mu, mu), Amu.T @ W @ Amu) < TOL
    w = rng.uniform(0.1, 10, n)
    assert rel_err(scaled_gram(A, w, mu), Amu.T @ np.diag(w) @ Amu) < TOL


@PROPS
@given(m=dims, n=dims, seed=seeds)
def test_adjoint_through_hadamard(m, n, seed):
    rng = np.random.default_rng(seed)
    A, mu, y = rng.standard_normal((n, m)), rng.standard_normal(m), rng.standard_normal(n)
    W = rng.standard_normal((n, n))  # any square matrix, not only SPD
    Amu = materialized_scaled(A, mu)
    assert rel_err(Amu.T @ W @ y, (A.T @ W @ y) * mu) < TOL
    assert rel_err(scaled_adjoint_apply(A, mu, W @ y), Amu.T @ W @ y) < TOL


@PROPS
@given(m=dims, n=dims, seed=seeds)
def test_apply_through_hadamard(m, n, seed):
    rng = np.random.default_rng(seed)
    A, mu, a = rng.standard_normal((n, m)), rng.standard_normal(m), rng.standard_normal(m)
    assert rel_err(scaled_apply(A, mu, a), materialized_scaled(A, mu) @ a) < TOL


@PROPS
@given(m=dims, n=dims, seed=seeds, alpha=st.floats(-5, 5), beta=st.floats(-5, 5))
def test_scaled_apply_is_linear(m, n, seed, alpha, beta):
    rng = np.random.default_rng(seed)
    A, mu = rng.standard_normal((n, m)), rng.standard_normal(m)
    a, b = rng.standard_normal(m), rng.standard_normal(m)
    lhs = scaled_apply(A, mu, alpha * a + beta * b)
    rhs = alpha * scaled_apply(A, mu, a) + beta * scaled_apply(A, mu, b)
    scale = abs(alpha) * np.linalg.norm(scaled_apply(A, mu, a)) + abs(beta) * np.linalg.norm(
        scaled_apply(A, mu, b))
    assert np.linalg.norm(lhs - rhs) <= TOL * max(scale, 1e-300)
