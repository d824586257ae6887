"""Fold a classifier bias into the feature vector without moving softmax.

A linear head scores a penultimate feature x as softmax(W^T x + b).  The bias
keeps the feature geometry from telling the whole story, so we complete the
map: append an orthonormal basis P of the orthogonal complement of
range(W^T) in logit space, giving W_bar^T = [W^T | P^T] with full row rank,
and shift every feature by the minimum-norm preimage of b,

    y = [x; 0] + pinv(W_bar^T) b.

Then W_bar^T y = W^T x + b exactly, so downstream geometry can work on y
alone.  When W^T already has full row rank (d >= C) nothing is appended and
the shift is the familiar pinv(W^T) b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nodi.errors import DimensionError, InvalidHead


@dataclass(frozen=True)
class ClassifierHead:
    """Raw linear head: W maps features (d) to logits (C), plus bias b."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if w.ndim != 2:
            raise InvalidHead(f"W must be 2-D (d x C), got shape {w.shape}")
        if b.ndim != 1 or b.shape[0] != w.shape[1]:
            raise InvalidHead(f"b must have shape ({w.shape[1]},), got {b.shape}")
        if w.shape[0] < 1 or w.shape[1] < 1:
            raise InvalidHead(f"head must have d >= 1 and C >= 1, got W {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidHead("head contains non-finite entries")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    @property
    def num_classes(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class CompletedHead:
    """Completion of a head: full-row-rank logit map plus the folded bias.

    w_bar_t is C x (d + m); its first d columns are W^T, the remaining m are
    an orthonormal basis of the complement of range(W^T).  pinv_bias is the
    minimum-norm vector with w_bar_t @ pinv_bias == b.
    """

    head: ClassifierHead
    w_bar_t: np.ndarray = field(repr=False)
    pinv_bias: np.ndarray = field(repr=False)
    rank: int
    rank_tol: float

    @property
    def m(self) -> int:
        return self.head.num_classes - self.rank

    @property
    def dim_completed(self) -> int:
        return self.head.dim + self.m


def complete_head(head: ClassifierHead, rank_tol: float = 1e-8) -> CompletedHead:
    """Build the completed logit map and folded bias for a head.

    The numerical rank of W^T counts singular values above rank_tol times the
    largest one; the appended basis spans exactly the directions the rank
    misses.  All factorizations are direct SVDs, so the result is
    deterministic for a given BLAS build.
    """
    if not 0.0 < rank_tol < 1.0:
        raise InvalidHead(f"rank_tol must be in (0, 1), got {rank_tol}")
    wt = head.w.T
    u, s, _ = np.linalg.svd(wt, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > rank_tol * s[0]))
    # columns of u past the rank span the orthogonal complement of range(W^T)
    w_bar_t = np.concatenate([wt, u[:, rank:]], axis=1)
    pinv_bias = np.linalg.pinv(w_bar_t, rcond=rank_tol) @ head.b
    return CompletedHead(head=head, w_bar_t=w_bar_t, pinv_bias=pinv_bias, rank=rank, rank_tol=rank_tol)


def encode(completed: CompletedHead, x: np.ndarray) -> np.ndarray:
    """Map raw features (..., d) to completed features (..., d + m)."""
    x = np.asarray(x, dtype=np.float64)
    d = completed.head.dim
    if x.ndim < 1 or x.shape[-1] != d:
        raise DimensionError(f"expected trailing dimension {d}, got shape {x.shape}")
    pad = np.zeros(x.shape[:-1] + (completed.m,), dtype=np.float64)
    return np.concatenate([x, pad], axis=-1) + completed.pinv_bias
