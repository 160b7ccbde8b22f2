import numpy as np
import pytest

from fluxmc.errors import AdjointMismatchError, DimensionError, StoreError, UnsupportedPathError
from fluxmc.forward import (ForwardOperator, NoiseSpec, PriorSpec, debias_observations, load_matrix,
                            save_matrix_binary, save_matrix_csv, synthetic_operator, toy_operator)


def test_debias_examples():
    op = ForwardOperator.from_matrix(np.eye(2))
    np.testing.assert_array_equal(debias_observations([5.0, 5.0], op), [5.0, 5.0])
    op = ForwardOperator.from_matrix(np.eye(2), offset=[1.0, 2.0])
    np.testing.assert_array_equal(debias_observations([5.0, 5.0], op), [4.0, 3.0])
    with pytest.raises(DimensionError):
        debias_observations([1.0, 2.0, 3.0], op)


def test_debias_round_trip():
    rng = np.random.default_rng(0)
    z, y = rng.standard_normal(9), rng.standard_normal(9)
    op = ForwardOperator.from_matrix(rng.standard_normal((9, 3)), offset=z)
    np.testing.assert_allclose(debias_observations(y, op) + z, y, rtol=0, atol=1e-15)


def test_toy_operator():
    np.testing.assert_array_equal(toy_operator(0.05).matrix, [[0.95, 0.05], [0.05, 0.95]])
    half = toy_operator(0.5).matrix
    np.testing.assert_array_equal(half, np.full((2, 2), 0.5))
    assert np.linalg.matrix_rank(half) == 1
    for bad in (0.0, -0.1):
        with pytest.raises(ValueError):
            toy_operator(bad)


def test_synthetic_rows_are_averaging_kernels():
    rng = np.random.default_rng(1)
    for _ in range(10):
        m, n = int(rng.integers(1, 40)), int(rng.integers(1, 60))
        op = synthetic_operator(m, n, float(rng.uniform(0.1, 5)), int(rng.integers(1000)))
        A = op.matrix
        assert A.shape == (n, m)
        assert np.all(A >= 0)
        sums = [sum(row) for row in A.tolist()]
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)
        assert np.isfinite(op.meta["condition_number"])


def test_synthetic_is_deterministic():
    a = synthetic_operator(12, 30, 1.5, seed=4).matrix
    b = synthetic_operator(12, 30, 1.5, seed=4).matrix
    assert a.tobytes() == b.tobytes()
    assert synthetic_operator(12, 30, 1.5, seed=5).matrix.tobytes() != a.tobytes()


def test_synthetic_sharp_limit_is_identity():
    np.testing.assert_array_equal(synthetic_operator(10, 10, 0.0).matrix, np.eye(10))
    narrow = synthetic_operator(10, 10, 1e-3).matrix
    np.testing.assert_allclose(narrow, np.eye(10), atol=1e-12)


def test_synthetic_rejects_bad_dimensions():
    with pytest.raises(DimensionError):
        synthetic_operator(0, 3)


def test_explicit_and_matrix_free_agree(make_problem):
    rng = np.random.default_rng(2)
    A = rng.standard_normal((13, 7))
    exp = ForwardOperator.from_matrix(A)
    imp = ForwardOperator.from_callables(lambda v: A @ v, lambda w: A.T @ w, 7, 13)
    for _ in range(10):
        v, w = rng.standard_normal(7), rng.standard_normal(13)
        np.testing.assert_allclose(exp.apply(v), imp.apply(v), rtol=1e-14, atol=0)
        np.testing.assert_allclose(exp.adjoint(w), imp.adjoint(w), rtol=1e-14, atol=0)
    assert exp.adjoint_mismatch(32) <= 1e-10
    assert imp.adjoint_mismatch(32) <= 1e-10
    assert exp.is_explicit and not imp.is_explicit
    with pytest.raises(UnsupportedPathError):
        imp.matrix


def test_inconsistent_adjoint_is_rejected():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 4))
    B = A + 1e-6 * rng.standard_normal((5, 4))
    with pytest.raises(AdjointMismatchError):
        ForwardOperator.from_callables(lambda v: A @ v, lambda w: B.T @ w, 4, 5)


def test_callable_shape_checked():
    op = ForwardOperator.from_callables(lambda v: v, lambda w: w, 3, 3)
    with pytest.raises(DimensionError):
        op.apply(np.ones(4))
    bad = ForwardOperator(apply=lambda v: np.ones(2), adjoint=lambda w: np.ones(3), m=3, n=3)
    with pytest.raises(DimensionError):
        bad.apply(np.ones(3))


def test_non_reentrant_operator_still_works():
    A = np.arange(6.0).reshape(3, 2)
    op = ForwardOperator.from_callables(lambda v: A @ v, lambda w: A.T @ w, 2, 3, reentrant=False)
    np.testing.assert_allclose(op.apply([1.0, 1.0]), [1.0, 5.0, 9.0])


def test_operator_is_immutable():
    A = np.eye(3)
    op = ForwardOperator.from_matrix(A)
    A[0, 0] = 7.0
    assert op.matrix[0, 0] == 1.0
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 2.0


def test_fingerprint_tracks_contents():
    a = ForwardOperator.from_matrix(np.eye(3)).fingerprint()
    assert a == ForwardOperator.from_matrix(np.eye(3)).fingerprint()
    assert a != ForwardOperator.from_matrix(2 * np.eye(3)).fingerprint()
    assert len(a) == 16


def test_specs_validate():
    with pytest.raises(ValueError):
        PriorSpec(np.ones(2), 0.0)
    with pytest.raises(ValueError):
        PriorSpec([1.0, np.nan], 1.0)
    with pytest.raises(ValueError):
        NoiseSpec([1.0, 0.0])
    assert NoiseSpec.scalar(2.0, 3).n == 3
    np.testing.assert_array_equal(NoiseSpec([2.0, 4.0]).precision, [0.5, 0.25])


@pytest.mark.parametrize("name", ["a.csv", "a.mat"])
def test_matrix_round_trip(tmp_path, name):
    A = np.random.default_rng(5).standard_normal((4, 3)) * 10.0 ** np.arange(-6, 6).reshape(4, 3)
    path = tmp_path / name
    (save_matrix_csv if name.endswith(".csv") else save_matrix_binary)(path, A)
    assert load_matrix(path).tobytes() == A.tobytes()


def test_binary_matrix_corruption(tmp_path):
    path = tmp_path / "a.mat"
    save_matrix_binary(path, np.eye(3))
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(StoreError):
        load_matrix(path)
