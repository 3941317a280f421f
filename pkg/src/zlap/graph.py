"""Bimodal kNN graph over class (text) nodes and image nodes.

Node layout: class nodes occupy indices ``0..C-1``, image ``i`` is node
``C + i``.  Only image nodes issue kNN queries, so class nodes never link to
each other directly.

Graph files are little-endian binaries::

    b"ZLGR" | u32 version (=1) | u64 node_count | u64 C | u64 nnz
    | (node_count+1) u64 row offsets | nnz u64 column indices | nnz f32 values
"""
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .embeddings import as_feature_matrix
from .errors import DataError, DegenerateInputError, FormatError, ShapeError, SizeError, ValidationError
from .knn import top_k

GRAPH_MAGIC = b"ZLGR"
GRAPH_VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")

SPARSIFY_MODES = ("row", "column", "global", "none")
KNN_MODES = ("separate", "joint")


@dataclass(frozen=True)
class GraphConfig:
    k_image: int = 5
    k_class: int = 5
    gamma: float = 5.0
    alpha: float = 0.3
    minmax_cross_modal: bool = False
    sparsify_mode: str = "row"
    xi: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.gamma > 0.0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if self.k_image < 1 or self.k_class < 1:
            raise ValidationError("k_image and k_class must be >= 1")
        if self.sparsify_mode not in SPARSIFY_MODES:
            raise ValidationError(f"unknown sparsify mode {self.sparsify_mode!r}")
        if self.xi < 1:
            raise ValidationError(f"xi must be >= 1, got {self.xi}")

    @classmethod
    def text_defaults(cls, **overrides):
        """Settings for prompt-averaged text class vectors."""
        return cls(**{"k_image": 5, "k_class": 5, "gamma": 5.0, "alpha": 0.3, **overrides})

    @classmethod
    def proxy_defaults(cls, **overrides):
        """Settings for class proxies, whose cross-modal similarities can be negative."""
        base = {"k_image": 10, "k_class": 10, "gamma": 3.0, "alpha": 0.3, "minmax_cross_modal": True}
        return cls(**{**base, **overrides})


@dataclass(frozen=True)
class SparseAdjacency:
    """CSR matrix over ``num_classes`` class nodes followed by image nodes."""

    matrix: sp.csr_matrix
    num_classes: int

    def __post_init__(self):
        m = self.matrix
        if m.shape[0] != m.shape[1]:
            raise ShapeError(f"adjacency must be square, got {m.shape}")
        if not 0 <= self.num_classes <= m.shape[0]:
            raise ShapeError("num_classes exceeds node count")

    @property
    def node_count(self):
        return self.matrix.shape[0]

    @property
    def num_images(self):
        return self.node_count - self.num_classes

    @property
    def nnz(self):
        return self.matrix.nnz

    def toarray(self):
        return self.matrix.toarray()

    def cross_modal_count(self):
        """Stored entries whose row is an image node and column a class node."""
        coo = self.matrix.tocoo()
        return int(np.count_nonzero((coo.row >= self.num_classes) & (coo.col < self.num_classes)))


def _csr(rows, cols, vals, n):
    m = sp.csr_matrix((np.asarray(vals, np.float32), (rows, cols)), shape=(n, n), dtype=np.float32)
    m.sum_duplicates()
    m.sort_indices()
    return m


def power_transform(v, gamma):
    """``max(v, 0) ** gamma``; works on scalars and arrays."""
    out = np.power(np.maximum(np.asarray(v, dtype=np.float64), 0.0), gamma)
    return float(out) if np.ndim(out) == 0 else out


def _minmax(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DegenerateInputError("min-max normalization of an empty value set")
    lo, hi = values.min(), values.max()
    if hi == lo:
        raise DegenerateInputError(f"min-max normalization needs distinct values, all equal {lo}")
    return (values - lo) / (hi - lo)


def minmax_normalize_values(adj):
    """Map every stored value affinely onto [0, 1]; sparsity structure is kept."""
    m = adj.matrix.copy()
    m.data = _minmax(m.data).astype(np.float32)
    return SparseAdjacency(m, adj.num_classes)


def build_bimodal_adjacency(images, classes, cfg, knn_mode="separate", threads=None):
    """Directed adjacency S from image queries.

    In ``separate`` mode each image links to its ``k_image`` nearest other
    images and, through a second search, to its ``k_class`` nearest classes.
    ``joint`` mode (diagnostic) runs a single ``k_image`` search over images and
    classes together, as a plain kNN graph would.

    Cross-modal weights pass through :func:`power_transform`; with
    ``cfg.minmax_cross_modal`` all stored values are min-max normalized first.
    Negative similarities become zero-weight edges so every weight is >= 0.
    """
    images = as_feature_matrix(images, "images")
    classes = as_feature_matrix(classes, "classes")
    if images.shape[1] != classes.shape[1]:
        raise ShapeError(f"image dim {images.shape[1]} != class dim {classes.shape[1]}")
    n_img, n_cls = images.shape[0], classes.shape[0]
    n = n_cls + n_img

    if knn_mode == "separate":
        nn_u = top_k(images, images, cfg.k_image, exclude_self=True, threads=threads)
        nn_w = top_k(images, classes, cfg.k_class, threads=threads)
        rows = np.concatenate([np.repeat(np.arange(n_img), nn_u.k), np.repeat(np.arange(n_img), nn_w.k)]) + n_cls
        cols = np.concatenate([nn_u.indices.ravel() + n_cls, nn_w.indices.ravel()])
        vals = np.concatenate([nn_u.similarities.ravel(), nn_w.similarities.ravel()])
    elif knn_mode == "joint":
        nodes = np.concatenate([classes, images])
        nn = top_k(images, nodes, cfg.k_image, exclude_self=True, self_offset=n_cls, threads=threads)
        rows = np.repeat(np.arange(n_img), nn.k) + n_cls
        cols = nn.indices.ravel()
        vals = nn.similarities.ravel()
    else:
        raise ValidationError(f"unknown knn mode {knn_mode!r}")

    return SparseAdjacency(_csr(rows, cols, _edge_weights(vals, cols < n_cls, cfg), n), n_cls)


def _edge_weights(sims, cross, cfg):
    """Raw similarities to nonnegative weights: optional min-max, clip, power on cross-modal."""
    w = _minmax(sims) if cfg.minmax_cross_modal else np.maximum(np.asarray(sims, np.float64), 0.0)
    w[cross] = power_transform(w[cross], cfg.gamma)
    return w


def symmetrize(adj):
    """S + S^T; reciprocal edges add up."""
    m = adj.matrix
    out = (m + m.T).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return SparseAdjacency(out.astype(np.float32), adj.num_classes)


def normalize_symmetric(adj):
    """D^-1/2 S D^-1/2 with D the row sums; zero-degree nodes use degree 1."""
    m = adj.matrix.tocsr()
    deg = np.asarray(m.sum(axis=1, dtype=np.float64)).ravel()
    if (deg < 0).any():
        raise DataError(f"negative degree at node {int(np.flatnonzero(deg < 0)[0])}")
    deg[deg == 0] = 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    coo = m.tocoo()
    # inv_sqrt[i] * inv_sqrt[j] is commutative, keeping the result exactly symmetric
    scale = inv_sqrt[coo.row] * inv_sqrt[coo.col]
    vals = coo.data.astype(np.float64) * scale
    return SparseAdjacency(_csr(coo.row, coo.col, vals, m.shape[0]), adj.num_classes)


def normalized_graph(adj):
    """Ŝ from a directed S: symmetrize then normalize."""
    return normalize_symmetric(symmetrize(adj))


def shortest_path_coverage(adj, labels, n_max):
    """Percent of images within ``n`` unweighted hops of their class node, for n = 1..n_max.

    ``adj`` is treated as undirected through its stored support.
    """
    labels = np.asarray(labels, dtype=np.int64)
    C, M = adj.num_classes, adj.num_images
    if labels.shape != (M,):
        raise ShapeError(f"expected {M} labels, got {labels.shape}")
    if n_max < 1 or M == 0:
        return np.zeros(max(n_max, 0))
    support = adj.matrix.copy()
    support.data = np.ones_like(support.data)
    support = ((support + support.T) > 0).astype(np.float32).tocsr()

    # reached[v, c]: node v is within the current hop count of class node c
    reached = np.zeros((adj.node_count, C), dtype=bool)
    reached[np.arange(C), np.arange(C)] = True
    image_rows = np.arange(M) + C
    out = np.empty(n_max)
    for n in range(1, n_max + 1):
        reached |= (support @ reached.astype(np.float32)) > 0
        out[n - 1] = 100.0 * np.count_nonzero(reached[image_rows, labels]) / M
    return out


def write_graph(path, adj):
    m = adj.matrix.tocsr()
    m.sort_indices()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GRAPH_MAGIC, GRAPH_VERSION, m.shape[0], adj.num_classes, m.nnz))
        fh.write(m.indptr.astype("<u8").tobytes())
        fh.write(m.indices.astype("<u8").tobytes())
        fh.write(m.data.astype("<f4").tobytes())


def load_graph(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a graph header")
    magic, version, n, n_cls, nnz = _HEADER.unpack_from(raw)
    if magic != GRAPH_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {GRAPH_MAGIC!r}")
    if version != GRAPH_VERSION:
        raise FormatError(f"{path}: unsupported graph format version {version}")
    if n_cls > n:
        raise FormatError(f"{path}: class count {n_cls} exceeds node count {n}")
    expected = (n + 1) * 8 + nnz * 12
    if len(raw) - _HEADER.size != expected:
        raise SizeError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, header requires {expected}")
    off = _HEADER.size
    indptr = np.frombuffer(raw, "<u8", n + 1, off).astype(np.int64)
    off += (n + 1) * 8
    indices = np.frombuffer(raw, "<u8", nnz, off).astype(np.int64)
    off += nnz * 8
    data = np.frombuffer(raw, "<f4", nnz, off).astype(np.float32)
    if indptr[0] != 0 or indptr[-1] != nnz or (np.diff(indptr) < 0).any():
        raise FormatError(f"{path}: corrupt row offsets")
    if nnz and indices.max() >= n:
        raise FormatError(f"{path}: column index out of range")
    if not np.isfinite(data).all():
        raise DataError(f"{path}: non-finite edge weights")
    return SparseAdjacency(sp.csr_matrix((data, indices, indptr), shape=(n, n)), int(n_cls))
