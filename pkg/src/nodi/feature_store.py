"""Feature sets and the common-sphere normalization.

Scoring operates on class-conditional reference sets that all live on one
sphere: each (optionally bias-folded) feature is rescaled to a fixed radius
r, so only direction survives.  The default radius follows the head shape:
7 for wide heads (feature dim >= class count), 4 for narrow ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nodi import containers
from nodi.bias_removal import ClassifierHead, complete_head, encode
from nodi.errors import DegenerateFeature, EmptyClass, LabelError


@dataclass(frozen=True)
class FeatureSet:
    """Raw features with integer labels in [0, num_classes)."""

    vectors: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if vectors.ndim != 2:
            raise LabelError(f"vectors must be 2-D, got shape {vectors.shape}")
        if labels.shape != (vectors.shape[0],):
            raise LabelError(f"labels shape {labels.shape} does not match {vectors.shape[0]} rows")
        if self.num_classes < 1:
            raise LabelError(f"num_classes must be >= 1, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise LabelError(
                f"labels must lie in [0, {self.num_classes}), found range "
                f"[{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class NormalizedFeatureSet:
    """Per-class reference points, all on the radius-r sphere."""

    vectors: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    num_classes: int
    r: float
    split_tag: str = "unspecified"
    bias_removed: bool = False

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def class_points(self, c: int) -> np.ndarray:
        if not 0 <= c < self.num_classes:
            raise LabelError(f"class {c} outside [0, {self.num_classes})")
        pts = self.vectors[self.labels == c]
        if pts.shape[0] == 0:
            raise EmptyClass(f"class {c} has no reference points")
        return pts

    def pooled(self) -> np.ndarray:
        """All reference points regardless of class (class-agnostic mode)."""
        return self.vectors

    def save(self, path) -> None:
        containers.write_store_file(
            path,
            self.vectors,
            self.labels,
            self.num_classes,
            self.r,
            self.split_tag,
            self.bias_removed,
        )

    @classmethod
    def load(cls, path) -> "NormalizedFeatureSet":
        raw = containers.read_store_file(path)
        return cls(
            vectors=np.asarray(raw["x"], dtype=np.float64),
            labels=np.asarray(raw["labels"], dtype=np.int64),
            num_classes=raw["num_classes"],
            r=raw["r"],
            split_tag=raw["split_tag"],
            bias_removed=raw["bias_removed"],
        )


def default_radius(dim: int, num_classes: int) -> float:
    """7 for wide heads (dim >= num_classes), 4 otherwise."""
    return 7.0 if dim >= num_classes else 4.0


def normalize(
    fs: FeatureSet,
    r: float,
    split_tag: str = "unspecified",
    bias_removed: bool = False,
) -> NormalizedFeatureSet:
    """Project every feature onto the radius-r sphere, keeping direction."""
    if not np.isfinite(r) or r <= 0.0:
        raise ValueError(f"radius must be positive and finite, got {r}")
    if not np.all(np.isfinite(fs.vectors)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(fs.vectors), axis=1))[0])
        raise DegenerateFeature(f"non-finite feature at row {bad}")
    norms = np.linalg.norm(fs.vectors, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateFeature(f"zero feature vector at row {bad} cannot be normalized")
    vectors = r * fs.vectors / norms[:, None]
    return NormalizedFeatureSet(
        vectors=vectors,
        labels=fs.labels,
        num_classes=fs.num_classes,
        r=float(r),
        split_tag=split_tag,
        bias_removed=bias_removed,
    )


def load_features(path) -> FeatureSet:
    x, labels, num_classes = containers.read_feature_file(path)
    return FeatureSet(vectors=np.asarray(x, dtype=np.float64), labels=labels, num_classes=num_classes)


def load_store(path) -> NormalizedFeatureSet:
    return NormalizedFeatureSet.load(path)


def ingest(
    features_path,
    head_path=None,
    r: float | None = None,
    split_tag: str = "unspecified",
) -> NormalizedFeatureSet:
    """File-to-store pipeline: parse, optionally fold the head bias, normalize.

    The radius defaults by head shape (falling back to the feature dimensions
    when no head is given); pass r to override.
    """
    fs = load_features(features_path)
    bias_removed = False
    if head_path is not None:
        w, b = containers.read_head_file(head_path)
        head = ClassifierHead(w=np.asarray(w, dtype=np.float64), b=np.asarray(b, dtype=np.float64))
        comp = complete_head(head)
        fs = FeatureSet(
            vectors=encode(comp, fs.vectors),
            labels=fs.labels,
            num_classes=fs.num_classes,
        )
        bias_removed = True
        shape_d, shape_c = head.dim, head.num_classes
    else:
        shape_d, shape_c = fs.dim, fs.num_classes
    if r is None:
        r = default_radius(shape_d, shape_c)
    return normalize(fs, r=r, split_tag=split_tag, bias_removed=bias_removed)
