import numpy as np
import pytest
import scipy.sparse as sp

from zlap.errors import CapacityError, NumericalError, ShapeError
from zlap.solver import LaplacianOperator, SolveConfig, cg_solve, dense_solve_oracle, iterative_propagation

from conftest import bimodal_operator


def dense_inverse_solution(op, b):
    return np.linalg.inv(np.eye(op.n) - op.alpha * op.s_hat.toarray()) @ b


def test_apply_zero_matrix_is_identity(rng):
    op = LaplacianOperator(sp.csr_matrix((5, 5)), 0.3)
    x = rng.standard_normal(5)
    np.testing.assert_array_equal(op.apply(x), x)


def test_apply_two_nodes():
    op = LaplacianOperator(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.3)
    np.testing.assert_allclose(op.apply([1.0, 0.0]), [1.0, -0.3])


def test_apply_matches_dense(rng):
    op, *_ = bimodal_operator(0, classes=2, per_class=19, dim=8)
    assert op.n == 40
    x = rng.standard_normal(40)
    np.testing.assert_allclose(op.apply(x), op.to_dense() @ x, rtol=1e-12, atol=1e-14)


def test_apply_shape_error():
    with pytest.raises(ShapeError):
        LaplacianOperator(sp.csr_matrix((3, 3)), 0.5).apply(np.ones(4))


def test_cg_identity_single_iteration(rng):
    op = LaplacianOperator(sp.csr_matrix((6, 6)), 0.7)
    b = rng.standard_normal(6)
    res = cg_solve(op, b)
    np.testing.assert_array_equal(res.x, b)
    assert res.iterations == 1 and res.converged


def test_cg_zero_rhs():
    op, *_ = bimodal_operator(1)
    res = cg_solve(op, np.zeros(op.n))
    assert res.converged and not res.x.any()


def test_cg_matches_dense_inverse():
    op, *_ = bimodal_operator(2, classes=4, per_class=49, dim=16)
    assert op.n == 200
    for c in range(4):
        b = np.zeros(op.n)
        b[c] = 1.0
        x = cg_solve(op, b).x
        ref = dense_inverse_solution(op, b)
        assert np.linalg.norm(x - ref) <= 1e-5 * np.linalg.norm(ref)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_cg_residual_contract(rng, alpha):
    op, *_ = bimodal_operator(3, alpha=alpha)
    b = rng.standard_normal((op.n, 5))
    cfg = SolveConfig(rel_tolerance=1e-8)
    res = cg_solve(op, b, cfg)
    assert res.converged.all()
    resid = np.linalg.norm(op.apply(res.x) - b, axis=0)
    assert np.all(resid <= 1e-8 * np.linalg.norm(b, axis=0))


def test_cg_non_convergence_flag():
    op, *_ = bimodal_operator(4, alpha=0.9)
    b = np.zeros(op.n)
    b[0] = 1.0
    res = cg_solve(op, b, SolveConfig(rel_tolerance=1e-14, max_iterations=2))
    assert not res.converged
    assert res.iterations == 2
    # best iterate still improves on x = 0
    assert np.linalg.norm(op.apply(res.x) - b) < np.linalg.norm(b)


def test_cg_nan_raises():
    op = LaplacianOperator(sp.csr_matrix(np.array([[0.0, np.nan], [np.nan, 0.0]])), 0.5)
    with pytest.raises(NumericalError) as info:
        cg_solve(op, np.array([1.0, 1.0]))
    assert info.value.iteration == 1


def test_cg_linearity(rng):
    op, *_ = bimodal_operator(5)
    b1, b2 = rng.standard_normal(op.n), rng.standard_normal(op.n)
    lhs = cg_solve(op, 2.0 * b1 - 0.5 * b2).x
    rhs = 2.0 * cg_solve(op, b1).x - 0.5 * cg_solve(op, b2).x
    assert np.linalg.norm(lhs - rhs) <= 1e-5 * np.linalg.norm(rhs)


def test_inverse_symmetry():
    op, *_ = bimodal_operator(6, per_class=10)
    eye = np.eye(op.n)
    cfg = SolveConfig(rel_tolerance=1e-9)
    cols = cg_solve(op, eye, cfg).x
    np.testing.assert_allclose(cols, cols.T, atol=1e-6)


def test_batched_columns_bit_identical_to_single(rng):
    op, *_ = bimodal_operator(7, classes=5, per_class=30)
    b = rng.standard_normal((op.n, 37))
    batched = cg_solve(op, b, threads=1).x
    threaded = cg_solve(op, b, threads=4).x
    single = np.stack([cg_solve(op, b[:, j]).x for j in range(b.shape[1])], axis=1)
    assert batched.tobytes() == threaded.tobytes()
    assert batched.tobytes() == single.tobytes()


def test_dense_oracle_identity(rng):
    b = rng.standard_normal(4)
    np.testing.assert_allclose(dense_solve_oracle(np.zeros((4, 4)), 0.3, b), b)


def test_dense_oracle_residual(rng):
    s = rng.random((5, 5))
    s = (s + s.T) / 10
    np.fill_diagonal(s, 0)
    b = rng.standard_normal(5)
    x = dense_solve_oracle(s, 0.3, b)
    np.testing.assert_allclose((np.eye(5) - 0.3 * s) @ x, b, atol=1e-10)


def test_dense_oracle_agrees_with_cg():
    op, *_ = bimodal_operator(8, classes=3, per_class=99, dim=16)
    assert op.n == 300
    b = np.zeros(op.n)
    b[1] = 1.0
    ref = dense_solve_oracle(op.s_hat, op.alpha, b)
    assert np.linalg.norm(cg_solve(op, b).x - ref) <= 1e-5 * np.linalg.norm(ref)


def test_dense_oracle_capacity():
    with pytest.raises(CapacityError):
        dense_solve_oracle(sp.csr_matrix((2001, 2001)), 0.3, np.zeros(2001))


def test_iterative_zero_iterations(rng):
    op, *_ = bimodal_operator(9)
    y = rng.standard_normal(op.n)
    np.testing.assert_array_equal(iterative_propagation(op, y, 0), y)


def test_iterative_zero_matrix(rng):
    op = LaplacianOperator(sp.csr_matrix((4, 4)), 0.3)
    y = rng.standard_normal(4)
    for t in (1, 5):
        np.testing.assert_allclose(iterative_propagation(op, y, t), 0.7 * y)


def test_iterative_matches_scaled_solution():
    op, *_ = bimodal_operator(10, classes=2, per_class=24, dim=8)
    assert op.n == 50
    y = np.zeros(op.n)
    y[0] = 1.0
    it = iterative_propagation(op, y, 2000)
    ref = (1 - op.alpha) * dense_solve_oracle(op.s_hat, op.alpha, y)
    np.testing.assert_allclose(it, ref, atol=1e-4)
    np.testing.assert_allclose(it, (1 - op.alpha) * cg_solve(op, y).x, atol=1e-4)


@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_positive_definite(alpha):
    op, *_ = bimodal_operator(11, classes=3, per_class=20, alpha=alpha)
    assert op.n <= 64
    assert np.linalg.eigvalsh(op.to_dense()).min() >= 1 - alpha * (1 + 1e-6)
