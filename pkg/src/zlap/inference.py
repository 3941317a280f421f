"""Transductive and inductive prediction on a bimodal label-propagation graph.

Propagated scores (``Y_hat``, one column per class) are stored in files::

    b"ZLPY" | u32 version (=1) | u8 layout (0 dense, 1 CSR) | u64 N | u64 C
    dense: N*C f32 row-major
    CSR:   u64 nnz | (N+1) u64 offsets | nnz u64 indices | nnz f32 values
"""
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .embeddings import as_feature_matrix
from .errors import DataError, FormatError, ShapeError, SizeError, ValidationError
from .graph import _edge_weights
from .knn import top_k
from .solver import SolveConfig, cg_solve

YHAT_MAGIC = b"ZLPY"
YHAT_VERSION = 1
_HEADER = struct.Struct("<4sIBQQ")
DENSE, CSR = 0, 1


@dataclass(frozen=True)
class Prediction:
    label: int
    scores: np.ndarray
    converged: bool = True
    degenerate: bool = False


@dataclass
class PropagatedScores:
    """N x C class confidences, dense ``float32`` ndarray or ``float32`` CSR matrix."""

    matrix: object
    converged: np.ndarray = None
    residuals: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if sp.issparse(self.matrix):
            self.matrix = sp.csr_matrix(self.matrix, dtype=np.float32)
            self.matrix.sort_indices()
        else:
            self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
            if self.matrix.ndim != 2:
                raise ShapeError(f"scores must be 2-D, got shape {self.matrix.shape}")

    @property
    def is_sparse(self):
        return sp.issparse(self.matrix)

    @property
    def layout(self):
        return "sparse" if self.is_sparse else "dense"

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self):
        return self.matrix.toarray() if self.is_sparse else self.matrix.copy()

    def density(self):
        n, c = self.shape
        stored = self.matrix.nnz if self.is_sparse else n * c
        return stored / float(n * c)


@dataclass(frozen=True)
class IndicatorVector:
    """Sparse representation of a query by its weighted in-graph neighbours."""

    indices: np.ndarray
    values: np.ndarray
    size: int

    def toarray(self):
        out = np.zeros(self.size)
        np.add.at(out, self.indices, self.values)
        return out

    @classmethod
    def basis(cls, j, size, weight=1.0):
        return cls(np.array([j], np.int64), np.array([weight], np.float64), size)


def _argmax(scores):
    """Arg-max along the last axis; ``np.argmax`` already returns the lowest index on ties."""
    return np.argmax(scores, axis=-1)


# -- transductive ---------------------------------------------------------


@dataclass
class TransductiveResult:
    labels: np.ndarray  # (M,) predicted class per image node
    scores: PropagatedScores  # full N x C solution

    @property
    def num_classes(self):
        return self.scores.shape[1]

    def image_scores(self):
        return self.scores.toarray()[self.num_classes:]

    def prediction(self, j):
        """Prediction for image ``j`` (node ``C + j``)."""
        c = self.num_classes
        row = self.scores.matrix[c + j].astype(np.float64)
        conv = True if self.scores.converged is None else bool(self.scores.converged.all())
        return Prediction(int(self.labels[j]), row, conv)


def _num_classes(op, num_classes):
    num_classes = num_classes if num_classes is not None else op.num_classes
    if num_classes is None or not 1 <= num_classes <= op.n:
        raise ValidationError(f"invalid class count {num_classes} for a graph of {op.n} nodes")
    return int(num_classes)


def precompute_Y(op, num_classes=None, cfg=None, threads=None):
    """Solve ``L y_c = e_c`` for every class node; columns of the result are ``y_c``.

    Each column's residual is re-checked after the solve.
    """
    cfg = cfg or SolveConfig()
    c = _num_classes(op, num_classes)
    rhs = np.zeros((op.n, c))
    rhs[np.arange(c), np.arange(c)] = 1.0
    res = cg_solve(op, rhs, cfg, threads=threads)
    residuals = np.linalg.norm(op.apply(res.x) - rhs, axis=0)
    converged = res.converged & (residuals <= cfg.rel_tolerance * 1.0001)
    return PropagatedScores(res.x, converged=converged, residuals=residuals)


def transductive_predict(op, num_classes=None, cfg=None, threads=None):
    """Label every image node by arg-max over its row of ``Y_hat``."""
    scores = precompute_Y(op, num_classes, cfg, threads)
    c = scores.shape[1]
    return TransductiveResult(_argmax(scores.matrix[c:]), scores)


# -- inductive ------------------------------------------------------------


def build_indicators(queries, images, classes, cfg, threads=None):
    """Indicator vectors for a batch of queries as a ``(Q, C + M)`` CSR matrix.

    Each query links to its ``k_image`` nearest images (weight = inner product)
    and ``k_class`` nearest classes (weight = power-transformed inner product),
    weighted exactly like graph edges; with ``cfg.minmax_cross_modal`` the
    min-max range is taken over the query's own entries.
    """
    images = as_feature_matrix(images, "images")
    classes = as_feature_matrix(classes, "classes")
    q = np.asarray(queries, dtype=np.float32)
    if q.ndim == 1:
        q = q[None, :]
    n_cls = classes.shape[0]
    n = n_cls + images.shape[0]
    nn_u = top_k(q, images, cfg.k_image, threads=threads)
    nn_w = top_k(q, classes, cfg.k_class, threads=threads)
    cols = np.concatenate([nn_u.indices + n_cls, nn_w.indices], axis=1)
    vals = np.concatenate([nn_u.similarities, nn_w.similarities], axis=1)
    vals = np.stack([_edge_weights(v, c < n_cls, cfg) for v, c in zip(vals, cols)]) if len(vals) else vals
    rows = np.repeat(np.arange(q.shape[0]), cols.shape[1])
    m = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(q.shape[0], n), dtype=np.float64)
    m.sort_indices()
    return m


def build_indicator(x, images, classes, cfg, threads=None):
    row = build_indicators(np.asarray(x)[None, :] if np.ndim(x) == 1 else x, images, classes, cfg, threads)
    if row.shape[0] != 1:
        raise ShapeError("build_indicator takes a single query vector")
    return IndicatorVector(row.indices.astype(np.int64), row.data.copy(), row.shape[1])


def _indicator_matrix(y_x, n=None):
    """Normalize an IndicatorVector, dense vector/matrix or sparse matrix to (Q, N) CSR."""
    if isinstance(y_x, IndicatorVector):
        m = sp.csr_matrix((y_x.values, (np.zeros_like(y_x.indices), y_x.indices)), shape=(1, y_x.size))
    elif sp.issparse(y_x):
        m = sp.csr_matrix(y_x, dtype=np.float64)
    else:
        arr = np.asarray(y_x, dtype=np.float64)
        m = sp.csr_matrix(arr[None, :] if arr.ndim == 1 else arr)
    if n is not None and m.shape[1] != n:
        raise ShapeError(f"indicator length {m.shape[1]} != graph size {n}")
    return m


def dual_inductive_scores(op, y_x, num_classes=None, cfg=None, threads=None):
    """Class scores ``(L^-1 y_x)[:C]`` for a batch of indicators (one solve each).

    Returns ``(scores (Q, C), converged (Q,))``.
    """
    c = _num_classes(op, num_classes)
    m = _indicator_matrix(y_x, op.n)
    res = cg_solve(op, m.T.toarray(), cfg, threads=threads)
    return res.x[:c].T.copy(), np.asarray(res.converged)


def dual_inductive_predict(op, y_x, num_classes=None, cfg=None):
    """Single-query prediction through one linear solve.

    An all-zero indicator gives zero scores, class 0 and ``degenerate=True``.
    """
    c = _num_classes(op, num_classes)
    m = _indicator_matrix(y_x, op.n)
    if m.shape[0] != 1:
        raise ShapeError("dual_inductive_predict takes a single indicator")
    if not np.any(m.data):
        return Prediction(0, np.zeros(c), True, degenerate=True)
    res = cg_solve(op, m.toarray()[0], cfg)
    scores = res.x[:c]
    return Prediction(int(_argmax(scores)), scores, res.converged)


def primal_inductive_predict(op, y_x, num_classes=None, cfg=None, threads=None):
    """Reference inductive path: solve all C class systems, then weight rows by ``y_x``."""
    scores = precompute_Y(op, num_classes, cfg, threads)
    return fast_inductive_predict(y_x, scores)


def fast_inductive_scores(y_x, Y):
    """``y_x^T Y_hat`` for a batch of indicators; returns ``(Q, C)`` float64."""
    m = _indicator_matrix(y_x, Y.shape[0])
    mat = Y.matrix
    if Y.is_sparse:
        return (m @ mat.astype(np.float64)).toarray()
    return np.asarray(m @ mat.astype(np.float64))


def fast_inductive_predict(y_x, Y):
    m = _indicator_matrix(y_x, Y.shape[0])
    if m.shape[0] != 1:
        raise ShapeError("fast_inductive_predict takes a single indicator")
    scores = fast_inductive_scores(m, Y)[0]
    conv = True if Y.converged is None else bool(np.all(Y.converged))
    return Prediction(int(_argmax(scores)), scores, conv, degenerate=not np.any(m.data))


def predict_labels(scores):
    return _argmax(np.asarray(scores))


# -- sparsification -------------------------------------------------------


def sparsify_Y(Y, mode="row", xi=1):
    """Keep the ``xi`` largest entries per row, per column, or ``xi * N`` overall.

    Ties go to the lower (row, column) position.  Kept values are unchanged.
    """
    if xi < 1:
        raise ValidationError(f"xi must be >= 1, got {xi}")
    if Y.is_sparse:
        raise ValidationError("sparsify_Y expects dense scores")
    dense = Y.matrix
    n, c = dense.shape
    neg = -dense
    if mode == "row":
        k = min(xi, c)
        cols = np.argsort(neg, axis=1, kind="stable")[:, :k]
        rows = np.repeat(np.arange(n), k)
        cols = cols.ravel()
    elif mode == "column":
        k = min(xi, n)
        rows = np.argsort(neg, axis=0, kind="stable")[:k]
        cols = np.tile(np.arange(c), k)
        rows = rows.ravel()
    elif mode == "global":
        k = min(xi * n, n * c)
        flat = np.argsort(neg.ravel(), kind="stable")[:k]
        rows, cols = np.divmod(flat, c)
    elif mode == "none":
        return PropagatedScores(sp.csr_matrix(dense), Y.converged, Y.residuals)
    else:
        raise ValidationError(f"unknown sparsify mode {mode!r}")
    # build CSR directly so retained zeros stay stored
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    m = sp.csr_matrix((dense[rows, cols], cols, indptr), shape=(n, c))
    return PropagatedScores(m, Y.converged, Y.residuals)


# -- persistence ----------------------------------------------------------


def write_Y(path, Y):
    n, c = Y.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(YHAT_MAGIC, YHAT_VERSION, CSR if Y.is_sparse else DENSE, n, c))
        if Y.is_sparse:
            m = Y.matrix
            fh.write(struct.pack("<Q", m.nnz))
            fh.write(m.indptr.astype("<u8").tobytes())
            fh.write(m.indices.astype("<u8").tobytes())
            fh.write(m.data.astype("<f4").tobytes())
        else:
            fh.write(Y.matrix.astype("<f4").tobytes())


def load_Y(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a score header")
    magic, version, layout, n, c = _HEADER.unpack_from(raw)
    if magic != YHAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {YHAT_MAGIC!r}")
    if version != YHAT_VERSION:
        raise FormatError(f"{path}: unsupported score format version {version}")
    off = _HEADER.size
    if layout == DENSE:
        if len(raw) - off != n * c * 4:
            raise SizeError(f"{path}: dense payload is {len(raw) - off} bytes, header requires {n * c * 4}")
        mat = np.frombuffer(raw, "<f4", n * c, off).reshape(n, c).astype(np.float32)
        if not np.isfinite(mat).all():
            raise DataError(f"{path}: non-finite scores")
        return PropagatedScores(mat)
    if layout != CSR:
        raise FormatError(f"{path}: unknown layout byte {layout}")
    if len(raw) - off < 8:
        raise SizeError(f"{path}: missing nnz field")
    (nnz,) = struct.unpack_from("<Q", raw, off)
    off += 8
    expected = (n + 1) * 8 + nnz * 12
    if len(raw) - off != expected:
        raise SizeError(f"{path}: CSR payload is {len(raw) - off} bytes, header requires {expected}")
    indptr = np.frombuffer(raw, "<u8", n + 1, off).astype(np.int64)
    off += (n + 1) * 8
    indices = np.frombuffer(raw, "<u8", nnz, off).astype(np.int64)
    off += nnz * 8
    data = np.frombuffer(raw, "<f4", nnz, off).astype(np.float32)
    if indptr[0] != 0 or indptr[-1] != nnz or (np.diff(indptr) < 0).any() or (nnz and indices.max() >= c):
        raise FormatError(f"{path}: corrupt CSR structure")
    if not np.isfinite(data).all():
        raise DataError(f"{path}: non-finite scores")
    return PropagatedScores(sp.csr_matrix((data, indices, indptr), shape=(n, c)))


def write_predictions(path_or_file, labels, scores, flags=None):
    """TSV lines ``query_index<TAB>class_index<TAB>score``; a fourth flag column when given."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w") if own else path_or_file
    try:
        for i, (lab, sc) in enumerate(zip(labels, scores)):
            line = f"{i}\t{int(lab)}\t{float(sc):.9g}"
            if flags is not None:
                line += f"\t{flags[i]}"
            fh.write(line + "\n")
    finally:
        if own:
            fh.close()


def load_predictions(path):
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                raise FormatError(f"{path}:{lineno}: expected at least 3 tab-separated fields")
            labels.append(int(parts[1]))
    return np.asarray(labels, dtype=np.int64)
