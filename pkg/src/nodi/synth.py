"""Seeded synthetic benchmark: low-rank Gaussian clusters plus a fitted head.

The generator builds a clean geometry first.  Each class is a Gaussian
cluster concentrated on a random low-dimensional affine subspace (a random
orthonormal frame per class), centered on a random unit direction scaled to
a class-specific radius (evenly laddered so radii are distinct).  Points get
a tiny full-dimensional jitter so the data matrix stays full rank.  Low
intrinsic dimension keeps within-cluster neighbor gaps small relative to the
cluster size, which is what separates neighborhood-averaged scoring from a
bare nearest-reference rule on this benchmark: sparse cluster edges produce
noisy nearest-neighbor distances that averaging smooths out.

A linear head is fit to the training geometry by least squares onto one-hot
labels, and a random bias is drawn.  The emitted raw features are then
shifted by minus the folded bias, so that bias removal recovers the clean
frame exactly; skipping it leaves every cluster off-center.  That makes the
bias-removal comparison structural rather than seed luck.

Near-OOD clusters sit on the chords between consecutive ID means at
interpolation factor ood_offset_near, and reuse the source class's frame, so
they read as slightly displaced copies of the parent manifold.  Far-OOD
clusters sit on fresh random directions at ood_offset_far times the mean ID
radius with fresh frames.  OOD label arrays are all zeros and carry no
meaning.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from nodi import containers
from nodi.bias_removal import ClassifierHead, complete_head
from nodi.feature_store import FeatureSet

RADIUS_LO = 5.0
RADIUS_HI = 8.0


@dataclass(frozen=True)
class SynthSpec:
    dim: int = 16
    num_classes: int = 4
    points_per_class: int = 500
    spread: float = 0.9
    intrinsic_dim: int = 2
    jitter: float = 0.005
    ood_offset_near: float = 0.05
    ood_offset_far: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.points_per_class < 1:
            raise ValueError(f"points_per_class must be >= 1, got {self.points_per_class}")
        if not self.spread > 0.0:
            raise ValueError(f"spread must be positive, got {self.spread}")
        if not 1 <= self.intrinsic_dim <= self.dim:
            raise ValueError(
                f"intrinsic_dim must lie in [1, dim], got {self.intrinsic_dim}"
            )
        if self.jitter < 0.0:
            raise ValueError(f"jitter must be nonnegative, got {self.jitter}")
        if not 0.0 < self.ood_offset_near < 1.0:
            raise ValueError(f"ood_offset_near must lie in (0, 1), got {self.ood_offset_near}")
        if not self.ood_offset_far > 0.0:
            raise ValueError(f"ood_offset_far must be positive, got {self.ood_offset_far}")

    @property
    def points_per_eval_cluster(self) -> int:
        return max(self.points_per_class // 5, 16)


@dataclass(frozen=True)
class SynthData:
    spec: SynthSpec
    head: ClassifierHead
    id_train: FeatureSet
    id_test: FeatureSet
    ood_near: FeatureSet
    ood_far: FeatureSet


def _unit_rows(rng, n, dim):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _frames(rng, n, dim, k):
    """n random orthonormal dim-by-k frames."""
    out = np.empty((n, dim, k))
    for i in range(n):
        q, _ = np.linalg.qr(rng.normal(size=(dim, k)))
        out[i] = q[:, :k]
    return out


def _manifold_cluster(rng, mean, frame, n, spec):
    """Points on the frame's subspace around mean, plus full-dim jitter."""
    z = spec.spread * rng.normal(size=(n, frame.shape[1]))
    pts = mean + z @ frame.T
    if spec.jitter > 0.0:
        pts = pts + spec.jitter * spec.spread * rng.normal(size=pts.shape)
    return pts


def generate(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    d, c, n = spec.dim, spec.num_classes, spec.points_per_class

    radii = np.linspace(RADIUS_LO, RADIUS_HI, c)
    id_means = radii[:, None] * _unit_rows(rng, c, d)
    id_frames = _frames(rng, c, d, spec.intrinsic_dim)

    clean_train = np.concatenate(
        [_manifold_cluster(rng, id_means[i], id_frames[i], n, spec) for i in range(c)]
    )
    labels_train = np.repeat(np.arange(c), n)

    n_eval = spec.points_per_eval_cluster
    clean_test = np.concatenate(
        [_manifold_cluster(rng, id_means[i], id_frames[i], n_eval, spec) for i in range(c)]
    )
    labels_test = np.repeat(np.arange(c), n_eval)

    if c >= 2:
        partners = np.roll(id_means, -1, axis=0)
    else:
        partners = -id_means
    near_means = id_means + spec.ood_offset_near * (partners - id_means)
    clean_near = np.concatenate(
        [_manifold_cluster(rng, near_means[i], id_frames[i], n_eval, spec) for i in range(c)]
    )

    far_means = (spec.ood_offset_far * radii.mean()) * _unit_rows(rng, c, d)
    far_frames = _frames(rng, c, d, spec.intrinsic_dim)
    clean_far = np.concatenate(
        [_manifold_cluster(rng, far_means[i], far_frames[i], n_eval, spec) for i in range(c)]
    )

    # head fit on the clean frame, one-hot targets, no intercept
    onehot = np.eye(c)[labels_train]
    w, *_ = np.linalg.lstsq(clean_train, onehot, rcond=None)

    # random bias, rescaled so the folded shift is large enough to matter
    b = rng.normal(size=c)
    head = ClassifierHead(w=w, b=b)
    comp = complete_head(head)
    if comp.m == 0 and np.linalg.norm(comp.pinv_bias) > 0.0:
        target_shift = 0.5 * radii.mean()
        b = b * (target_shift / np.linalg.norm(comp.pinv_bias))
        head = ClassifierHead(w=w, b=b)
        comp = complete_head(head)

    # emit raw features shifted so that encoding restores the clean frame;
    # only possible without padding dimensions (full-row-rank heads)
    shift = comp.pinv_bias if comp.m == 0 else np.zeros(d)

    def emit(points, labels):
        return FeatureSet(vectors=points - shift, labels=labels, num_classes=c)

    zeros_eval = np.zeros(c * n_eval, dtype=np.int64)
    return SynthData(
        spec=spec,
        head=head,
        id_train=emit(clean_train, labels_train),
        id_test=emit(clean_test, labels_test),
        ood_near=emit(clean_near, zeros_eval),
        ood_far=emit(clean_far, zeros_eval),
    )


def write_bundle(data: SynthData, out_dir) -> None:
    """Serialize head, splits, and the spec into a directory."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    containers.write_head_file(out / "head.bin", data.head.w, data.head.b)
    for name in ("id_train", "id_test", "ood_near", "ood_far"):
        fs: FeatureSet = getattr(data, name)
        containers.write_feature_file(out / f"{name}.bin", fs.vectors, fs.labels, fs.num_classes)
    (out / "spec.json").write_text(json.dumps(asdict(data.spec), indent=2, sort_keys=True) + "\n")
