"""Synthetic bimodal data, the nearest-class baseline, and accuracy reports.

Randomness comes from :class:`SplitMix64`, a counter-based 64-bit generator
simple enough to re-implement anywhere:

* output ``i`` (1-based) of seed ``s`` is ``mix(s + i * 0x9E3779B97F4A7C15 mod 2**64)``
  with ``mix(z) = z ^ z>>30; z *= 0xBF58476D1CE4E5B9; z ^= z>>27;
  z *= 0x94D049BB133111EB; z ^= z>>31``;
* uniforms are ``(u >> 11) * 2**-53``;
* normals use Box-Muller on consecutive uniform pairs ``(a, b)``:
  ``sqrt(-2 ln(1 - a)) * (cos 2πb, sin 2πb)``.

:func:`generate_bimodal` draws, in this order: class anchors (C x d normals),
the gap direction (d normals), per-class noise bases (C x d x r normals), then
noise coefficients (C * n x r normals).
"""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    def __init__(self, seed):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def next_u64(self, n):
        i = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = self.seed + i * _GOLDEN
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n):
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n):
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        out = np.empty((pairs, 2))
        out[:, 0] = radius * np.cos(angle)
        out[:, 1] = radius * np.sin(angle)
        return out.ravel()[:n]


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 10
    images_per_class: int = 100
    dim: int = 64
    cluster_spread: float = 1.0
    modality_gap: float = 0.8
    seed: int = 0
    intrinsic_dim: int = 4

    def __post_init__(self):
        if self.classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.dim < 4:
            raise ValidationError("dim must be >= 4")
        if not self.cluster_spread > 0:
            raise ValidationError("cluster_spread must be positive")
        if self.images_per_class < 1:
            raise ValidationError("images_per_class must be >= 1")
        if not 1 <= self.intrinsic_dim <= self.dim:
            raise ValidationError("intrinsic_dim must lie in [1, dim]")


def _unit_rows(m):
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def generate_bimodal(cfg):
    """Unit class anchors and images clustered around gap-shifted anchors.

    Image ``i`` of class ``c`` is ``normalize(w_c + gap * g + noise)`` with ``g``
    a shared unit direction.  The noise lives in a random ``intrinsic_dim``-
    dimensional subspace per class and has expected norm about ``spread``, so
    each class forms a low-dimensional cluster whose kNN structure is
    informative while its anchor is only a rough guide.

    Returns ``(images, classes, labels)`` with images ordered class by class.
    """
    rng = SplitMix64(cfg.seed)
    C, n, d, r = cfg.classes, cfg.images_per_class, cfg.dim, cfg.intrinsic_dim
    anchors = _unit_rows(rng.normal(C * d).reshape(C, d))
    gap_dir = rng.normal(d)
    gap_dir /= np.linalg.norm(gap_dir)
    bases = rng.normal(C * d * r).reshape(C, d, r) / np.sqrt(d)
    coeffs = rng.normal(C * n * r).reshape(C, n, r) * (cfg.cluster_spread / np.sqrt(r))
    noise = np.einsum("cdr,cnr->cnd", bases, coeffs).reshape(C * n, d)
    labels = np.repeat(np.arange(C, dtype=np.int64), n)
    images = _unit_rows(anchors[labels] + cfg.modality_gap * gap_dir + noise)
    return images.astype(np.float32), anchors.astype(np.float32), labels


def nearest_class_baseline(images, classes):
    """Zero-shot prediction: arg-max cosine to the class vectors, lowest index on ties."""
    sims = np.asarray(images, np.float64) @ np.asarray(classes, np.float64).T
    return np.argmax(sims, axis=1)


@dataclass(frozen=True)
class EvalReport:
    overall: float
    per_class: np.ndarray
    confusion: np.ndarray  # confusion[true, predicted]

    def format(self, class_names=None):
        lines = [f"overall accuracy: {self.overall:.2f}%"]
        for c, acc in enumerate(self.per_class):
            name = class_names[c] if class_names else str(c)
            support = int(self.confusion[c].sum())
            shown = "n/a" if support == 0 else f"{acc:.2f}%"
            lines.append(f"  class {name}: {shown} ({support} images)")
        return "\n".join(lines)


def accuracy(predictions, labels, num_classes=None):
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ShapeError(f"predictions {predictions.shape} and labels {labels.shape} differ")
    if num_classes is None:
        num_classes = int(max(predictions.max(initial=-1), labels.max(initial=-1))) + 1
    if predictions.size and (min(predictions.min(), labels.min()) < 0):
        raise ValidationError("class indices must be non-negative")
    confusion = np.bincount(labels * num_classes + predictions, minlength=num_classes * num_classes)
    confusion = confusion.reshape(num_classes, num_classes)
    total = int(confusion.sum())
    overall = 100.0 * int(np.trace(confusion)) / total if total else 0.0
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, 100.0 * np.diag(confusion) / support, np.nan)
    return EvalReport(overall, per_class, confusion)
