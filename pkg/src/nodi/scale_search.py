"""Search for the input scale whose recovered origin lands on the sphere.

Test features carry no trustworthy magnitude (normalization throws it away),
so scoring first asks: at what scale s does the denoised version of s * y
have norm r, like every reference point?  recovered_norm evaluates that norm
through one denoising step; find_scale bisects s over [r/2, 2r].

Two branch orientations are provided.  "paper" replays the published loop
verbatim: overshoot (recovered norm above r) raises the lower edge.  That
polarity only converges when the recovered norm falls with scale; against
the closed-form stable point the overshoot branch can never fire and the
loop drifts to the lower edge.  "auto" instead probes both endpoints,
bisects whichever sign arrangement actually brackets r, and falls back to
the better endpoint (flagged no_bracket) when none does.  Callers default to
"auto" for stable-point scoring and "paper" for trained predictors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ScaleSearchConfig:
    """thr defaults to 1e-3 * r at call time when left as None."""

    thr: float | None = None
    max_iters: int = 50
    orientation: str = "paper"

    def __post_init__(self):
        if self.orientation not in ("paper", "auto"):
            raise ValueError(f"orientation must be 'paper' or 'auto', got {self.orientation!r}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.thr is not None and not self.thr >= 0.0:
            raise ValueError(f"thr must be >= 0, got {self.thr}")


@dataclass(frozen=True)
class ScaleSearchResult:
    scale: float
    err: float
    iters: int
    no_bracket: bool = False


def recovered_norm(
    y: np.ndarray,
    scale: float,
    noise_fn: Callable[[np.ndarray], np.ndarray],
    abar: float,
) -> float:
    """Norm of the one-step denoised origin of scale * y."""
    v = scale * np.asarray(y, dtype=np.float64)
    eta = noise_fn(v)
    return float(np.linalg.norm(v - np.sqrt(1.0 - abar) * eta) / np.sqrt(abar))


def find_scale(
    y: np.ndarray,
    noise_fn: Callable[[np.ndarray], np.ndarray],
    r: float,
    abar: float,
    config: ScaleSearchConfig = ScaleSearchConfig(),
) -> ScaleSearchResult:
    """Bisection for the scale with recovered norm r; see module docstring.

    y must be a unit direction.  Always evaluates at least one midpoint, so
    a flat error profile still reports the bracket center.  iters counts
    midpoint evaluations; the two endpoint probes of "auto" are free.
    """
    y = np.asarray(y, dtype=np.float64)
    if abs(np.linalg.norm(y) - 1.0) > 1e-6:
        raise ValueError(f"y must be unit-norm, got ||y|| = {np.linalg.norm(y)}")
    if not (np.isfinite(r) and r > 0.0):
        raise ValueError(f"r must be positive and finite, got {r}")
    if not (np.isfinite(abar) and 0.0 < abar < 1.0):
        raise ValueError(f"abar must lie strictly inside (0, 1), got {abar}")
    thr = 1e-3 * r if config.thr is None else config.thr
    lo, hi = r / 2.0, 2.0 * r

    if config.orientation == "auto":
        f_lo = recovered_norm(y, lo, noise_fn, abar) - r
        f_hi = recovered_norm(y, hi, noise_fn, abar) - r
        # endpoint values within float noise of zero count as zero, so a
        # constant-r profile still brackets and gets its midpoint evaluation
        band = 1e-9 * r
        s_lo = 0 if abs(f_lo) <= band else (1 if f_lo > 0.0 else -1)
        s_hi = 0 if abs(f_hi) <= band else (1 if f_hi > 0.0 else -1)
        if s_lo * s_hi > 0:
            # nothing to bisect: report the less wrong endpoint
            if abs(f_lo) <= abs(f_hi):
                return ScaleSearchResult(scale=lo, err=abs(f_lo), iters=0, no_bracket=True)
            return ScaleSearchResult(scale=hi, err=abs(f_hi), iters=0, no_bracket=True)
        lo_sign_negative = (s_lo < 0) or (s_lo == 0 and s_hi > 0)

    mid = 0.5 * (lo + hi)
    err = np.inf
    iters = 0
    while iters < config.max_iters:
        mid = 0.5 * (lo + hi)
        rt = recovered_norm(y, mid, noise_fn, abar)
        err = abs(rt - r)
        iters += 1
        if err <= thr:
            break
        if config.orientation == "paper":
            if rt > r:
                lo = mid
            else:
                hi = mid
        else:
            if (rt - r < 0.0) == lo_sign_negative:
                lo = mid
            else:
                hi = mid
    return ScaleSearchResult(scale=float(mid), err=float(err), iters=iters)
