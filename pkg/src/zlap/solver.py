"""Label-propagation systems ``(I - alpha * S_hat) x = b``.

:func:`cg_solve` handles one or many right-hand sides at once; each column is
an independent conjugate-gradient run and all reductions are done per column,
so a column's result does not depend on which other columns share the batch.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._parallel import parallel_map
from .errors import CapacityError, NumericalError, ShapeError, ValidationError

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class SolveConfig:
    rel_tolerance: float = 1e-6
    max_iterations: int = 1000

    def __post_init__(self):
        if not self.rel_tolerance > 0:
            raise ValidationError(f"rel_tolerance must be positive, got {self.rel_tolerance}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")


class LaplacianOperator:
    """Matrix-free ``L = I - alpha * S_hat``.

    ``s_hat`` may be a :class:`~zlap.graph.SparseAdjacency`, a scipy sparse
    matrix or a dense array.  A float64 copy is kept so products accumulate in
    double precision.
    """

    def __init__(self, s_hat, alpha):
        if not 0.0 < alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
        matrix = getattr(s_hat, "matrix", s_hat)
        self.num_classes = getattr(s_hat, "num_classes", None)
        self.s_hat = sp.csr_matrix(matrix, dtype=np.float64)
        if self.s_hat.shape[0] != self.s_hat.shape[1]:
            raise ShapeError(f"S_hat must be square, got {self.s_hat.shape}")
        self.s_hat.sort_indices()
        self.alpha = float(alpha)

    @property
    def n(self):
        return self.s_hat.shape[0]

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.n:
            raise ShapeError(f"vector length {x.shape[0]} != operator size {self.n}")
        return x - self.alpha * (self.s_hat @ x)

    __matmul__ = apply

    def to_dense(self):
        return np.eye(self.n) - self.alpha * self.s_hat.toarray()


@dataclass
class CGResult:
    """Solution(s) plus per-column convergence info.

    For a 1-D right-hand side ``x`` is 1-D and the other fields are scalars.
    """

    x: np.ndarray
    converged: object
    iterations: object
    residual: object


def _colnorms(a):
    # 1-D pairwise reductions keep each column's value independent of batch layout
    return np.array([np.sqrt(np.add.reduce(c * c)) for c in a.T])


def _coldots(a, b):
    return np.array([np.add.reduce(ca * cb) for ca, cb in zip(a.T, b.T)])


def _cg_block(op, b, tol, max_iter):
    n, r = b.shape
    x = np.zeros((n, r))
    res = b.copy()
    p = res.copy()
    rr = _coldots(res, res)
    bnorm = np.sqrt(rr)
    target = tol * bnorm
    active = bnorm > 0
    converged = ~active
    iters = np.zeros(r, dtype=np.int64)
    best_x = x.copy()
    best_res = bnorm.copy()

    for it in range(1, max_iter + 1):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        pa = p[:, a]
        ap = op.apply(pa)
        step = rr[a] / _coldots(pa, ap)
        x[:, a] += step * pa
        ra = res[:, a] - step * ap
        rr_new = _coldots(ra, ra)
        if not (np.isfinite(rr_new).all() and np.isfinite(step).all()):
            raise NumericalError(f"non-finite value in conjugate gradient at iteration {it}", iteration=it)
        iters[a] = it
        rnorm = np.sqrt(rr_new)

        hit = rnorm <= target[a]
        if hit.any():
            # confirm with the true residual; the recurrence drifts
            cols = a[hit]
            true_r = b[:, cols] - op.apply(x[:, cols])
            true_norm = _colnorms(true_r)
            ok = true_norm <= target[cols]
            converged[cols[ok]] = True
            active[cols[ok]] = False
            best_x[:, cols[ok]] = x[:, cols[ok]]
            best_res[cols[ok]] = true_norm[ok]
            # restart the rest from the true residual
            redo = np.flatnonzero(hit)[~ok]
            ra[:, redo] = true_r[:, ~ok]
            rr_new[redo] = true_norm[~ok] ** 2
            rnorm[redo] = true_norm[~ok]

        improved = rnorm < best_res[a]
        keep = a[improved & active[a]]
        best_x[:, keep] = x[:, keep]
        best_res[keep] = rnorm[improved & active[a]]

        beta = rr_new / rr[a]
        res[:, a] = ra
        p[:, a] = ra + beta * pa
        rr[a] = rr_new

    x_final = np.where(converged[None, :], x, best_x)
    return x_final, converged, iters, best_res


def cg_solve(op, b, cfg=None, threads=None, chunk=16):
    """Solve ``L x = b`` by conjugate gradient.

    ``b`` is a vector or an ``(N, r)`` matrix of independent right-hand sides.
    Converged columns satisfy ``||L x - b|| <= rel_tolerance * ||b||``; the
    rest return their lowest-residual iterate with ``converged`` False.
    Columns are solved in fixed chunks of ``chunk``, spread over ``threads``.
    """
    cfg = cfg or SolveConfig()
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    if b.ndim not in (1, 2) or b.shape[0] != op.n:
        raise ShapeError(f"right-hand side shape {b.shape} does not match operator size {op.n}")
    if not np.isfinite(b).all():
        raise ValidationError("right-hand side contains non-finite values")
    B = b.reshape(op.n, -1)
    r = B.shape[1]
    starts = range(0, r, chunk)
    parts = parallel_map(
        lambda s: _cg_block(op, np.array(B[:, s:s + chunk]), cfg.rel_tolerance, cfg.max_iterations),
        starts,
        threads if r > chunk else 1,
    )
    x = np.concatenate([p[0] for p in parts], axis=1) if parts else np.zeros((op.n, 0))
    conv = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, bool)
    iters = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0, np.int64)
    resid = np.concatenate([p[3] for p in parts]) if parts else np.zeros(0)
    if vector:
        return CGResult(x[:, 0], bool(conv[0]), int(iters[0]), float(resid[0]))
    return CGResult(x, conv, iters, resid)


def dense_solve_oracle(s_hat, alpha, b):
    """Closed-form ``x = (I - alpha * S_hat)^-1 b`` by dense LU; N <= 2000 only."""
    matrix = getattr(s_hat, "matrix", s_hat)
    n = matrix.shape[0]
    if n > DENSE_LIMIT:
        raise CapacityError(f"dense solve limited to N <= {DENSE_LIMIT}, got {n}")
    dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    lap = np.eye(n) - alpha * dense.astype(np.float64)
    return np.linalg.solve(lap, np.asarray(b, dtype=np.float64))


def iterative_propagation(op, y, iterations):
    """Run ``y_{t+1} = alpha * S_hat y_t + (1 - alpha) y`` from ``y_0 = y``.

    Converges to ``(1 - alpha) * L^-1 y``.
    """
    if iterations < 0:
        raise ValidationError("iterations must be >= 0")
    y = np.asarray(y, dtype=np.float64)
    base = (1.0 - op.alpha) * y
    cur = y.copy()
    for _ in range(iterations):
        cur = op.alpha * (op.s_hat @ cur) + base
    return cur

