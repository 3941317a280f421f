"""Exact top-k inner-product search.

Similarities are computed block-by-block with a float64 matrix product; the
block partition depends only on the candidate count, so results are identical
for any worker count.
"""
from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .errors import EmptyInputError, ShapeError, ValidationError

_BLOCK_ELEMENTS = 1 << 22
_MAX_BLOCK_ROWS = 1024


@dataclass(frozen=True)
class NeighborList:
    """Per-query neighbours, sorted by similarity descending then index ascending.

    ``indices`` and ``similarities`` have shape ``(queries, k)`` where ``k`` is
    the requested count clamped to the number of available candidates.
    """

    indices: np.ndarray
    similarities: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]


def _as_rows(x, name):
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 1-D or 2-D, got shape {x.shape}")
    return np.ascontiguousarray(x, dtype=np.float64)


def _select(sims, k):
    """Top-k columns of each row of ``sims`` under the (value desc, index asc) order."""
    rows, n = sims.shape
    if k >= n:
        idx = np.broadcast_to(np.arange(n), (rows, n)).copy()
    else:
        idx = np.argpartition(-sims, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(sims, idx, axis=1).min(axis=1)
        # argpartition picks arbitrarily among values tied at the boundary
        crowded = np.flatnonzero((sims >= kth[:, None]).sum(axis=1) > k)
        for r in crowded:
            idx[r] = np.argsort(-sims[r], kind="stable")[:k]
    vals = np.take_along_axis(sims, idx, axis=1)
    order = np.lexsort((idx, -vals), axis=1)
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(vals, order, axis=1)


def top_k(queries, candidates, k, exclude_self=False, *, self_offset=0, threads=None):
    """Exact k nearest candidates of every query by inner product.

    Parameters
    ----------
    queries : array (Q, d) or (d,)
    candidates : array (N, d)
    k : int
        Requested neighbour count; clamped to the available candidates.
    exclude_self : bool
        Query ``i`` is candidate ``i + self_offset`` and must not be returned.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    q = _as_rows(queries, "queries")
    cand = _as_rows(candidates, "candidates")
    if cand.shape[0] == 0:
        raise EmptyInputError("candidate set is empty")
    if q.shape[1] != cand.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != candidate dim {cand.shape[1]}")
    n_q, n_c = q.shape[0], cand.shape[0]
    if exclude_self and self_offset + n_q > n_c:
        raise ShapeError("self exclusion requires every query to be a candidate")
    k_eff = min(k, n_c - 1 if exclude_self else n_c)
    if n_q == 0 or k_eff == 0:
        return NeighborList(np.zeros((n_q, 0), np.int64), np.zeros((n_q, 0), np.float64))

    step = max(1, min(_MAX_BLOCK_ROWS, _BLOCK_ELEMENTS // n_c))
    cand_t = cand.T

    def run(start):
        stop = min(start + step, n_q)
        sims = q[start:stop] @ cand_t
        if exclude_self:
            local = np.arange(stop - start)
            sims[local, local + start + self_offset] = -np.inf
        return _select(sims, k_eff)

    parts = parallel_map(run, range(0, n_q, step), threads)
    idx = np.concatenate([p[0] for p in parts]).astype(np.int64)
    vals = np.concatenate([p[1] for p in parts])
    return NeighborList(idx, vals)
