"""Feature matrices, class prompts and label files.

Feature files are little-endian binaries::

    b"ZLAP" | u32 version (=1) | u64 rows | u64 dim | rows*dim f32, row-major

Feature matrices are handled as plain ``float32`` numpy arrays of shape
``(rows, dim)``.
"""
import struct

import numpy as np

from .errors import DataError, DegenerateInputError, EmptyInputError, FormatError, ShapeError, SizeError

FEATURE_MAGIC = b"ZLAP"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def as_feature_matrix(m, name="features"):
    """Validate ``m`` as a 2-D, finite, non-empty matrix and return it as float32."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise EmptyInputError(f"{name} must have at least one row and one column, got {m.shape}")
    m = np.ascontiguousarray(m, dtype=np.float32)
    if not np.isfinite(m).all():
        raise DataError(f"{name} contains non-finite values")
    return m


def write_features(path, m):
    m = as_feature_matrix(m)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, m.shape[0], m.shape[1]))
        fh.write(m.astype("<f4", copy=False).tobytes())


def load_features(path):
    """Read a feature file exactly as stored (no normalization)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a feature header")
    magic, version, rows, dim = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature format version {version}")
    if rows < 1 or dim < 1:
        raise FormatError(f"{path}: header declares empty matrix ({rows}x{dim})")
    expected = rows * dim * 4
    payload = len(raw) - _HEADER.size
    if payload != expected:
        raise SizeError(f"{path}: payload is {payload} bytes, header requires {expected}")
    m = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, dim).astype(np.float32)
    if not np.isfinite(m).all():
        raise DataError(f"{path}: non-finite values in payload")
    return m


def l2_normalize(m):
    """Divide each row by its Euclidean norm.

    Raises
    ------
    DegenerateInputError
        If a row has zero norm; ``err.index`` names the first such row.
    """
    m = as_feature_matrix(m)
    m64 = m.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", m64, m64))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"row {zero[0]} has zero norm", index=int(zero[0]))
    return (m64 / norms[:, None]).astype(np.float32)


def average_class_prompts(prompt_features, prompts_per_class):
    """Build one class vector per class from ``C * P`` prompt embeddings.

    Row ``c * P + j`` of ``prompt_features`` is prompt ``j`` of class ``c``.
    The class vector is the mean of its prompts, re-normalized to unit norm.
    """
    if prompts_per_class < 1:
        raise EmptyInputError("prompt group has zero prompts per class")
    prompt_features = as_feature_matrix(prompt_features, "prompt features")
    rows, dim = prompt_features.shape
    if rows % prompts_per_class:
        raise ShapeError(f"{rows} prompt rows is not a multiple of {prompts_per_class} prompts per class")
    grouped = prompt_features.astype(np.float64).reshape(rows // prompts_per_class, prompts_per_class, dim)
    means = grouped.mean(axis=1)
    norms = np.linalg.norm(means, axis=1)
    # cancellation check is relative to the prompt scale
    zero = np.flatnonzero(norms <= 1e-7 * np.abs(grouped).max(axis=(1, 2)))
    if zero.size:
        raise DegenerateInputError(f"prompts of class {zero[0]} average to the zero vector", index=int(zero[0]))
    return (means / norms[:, None]).astype(np.float32)


def load_labels(path):
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line, 10))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not an integer label: {line!r}") from None
    return np.asarray(labels, dtype=np.int64)


def write_labels(path, labels):
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


def validate_labels(labels, num_classes, length=None):
    labels = np.asarray(labels, dtype=np.int64)
    if length is not None and labels.shape != (length,):
        raise ShapeError(f"expected {length} labels, got {labels.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes})")
    return labels


def load_class_names(path):
    with open(path) as fh:
        return [line.rstrip("\r\n") for line in fh if line.strip()]
