"""Closed-form stable point of the class-conditional noise field.

Given a query y and reference points x_i (one class, all on a common
sphere), each reference proposes the noise that would have produced y from
it at cumulative signal level abar:

    eps_i = (y - sqrt(abar) x_i) / sqrt(1 - abar)

The stable point is the fixed point of the recovery map, which works out to
the Gaussian-weighted average of the proposals,

    eta = sum_i w_i eps_i / sum_i w_i,   w_i = exp(-||eps_i||^2 / 2),

equivalently the minimizer of the weighted quadratic sum_i w_i ||eta -
eps_i||^2 (the weights do not depend on eta).  Distant queries make every
unshifted weight underflow, so the weights are formed in log space with a
max shift; terms far below the leader contribute nothing and are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nodi.errors import DimensionError, EmptyClass


@dataclass(frozen=True)
class StablePointConfig:
    """Numerical knobs for the evaluator.

    log_weight_floor: terms whose shifted log-weight falls below this are
        dropped (the default keeps everything representable in float64).
    score_t: number of forward steps the scorer evaluates at (one-based;
        step count t reads the cumulative coefficient at zero-based index
        t - 1).  Validated against the schedule length by the consumer.
    """

    log_weight_floor: float = -745.0
    score_t: int = 3

    def __post_init__(self):
        if self.score_t < 1:
            raise ValueError(f"score_t is a step count, must be >= 1, got {self.score_t}")
        if not self.log_weight_floor < 0.0:
            raise ValueError(f"log_weight_floor must be negative, got {self.log_weight_floor}")


def _check_inputs(y: np.ndarray, class_points: np.ndarray, abar: float):
    y = np.asarray(y, dtype=np.float64)
    pts = np.asarray(class_points, dtype=np.float64)
    if pts.ndim != 2:
        raise DimensionError(f"class_points must be 2-D, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise EmptyClass("cannot take a stable point over zero reference points")
    if y.shape != (pts.shape[1],):
        raise DimensionError(f"query shape {y.shape} does not match point dim {pts.shape[1]}")
    if not (np.isfinite(abar) and 0.0 < abar < 1.0):
        raise ValueError(f"abar must lie strictly inside (0, 1), got {abar}")
    return y, pts


def residuals(y: np.ndarray, points: np.ndarray, abar: float) -> np.ndarray:
    """Per-point noise proposals, shape (n, dim)."""
    y, pts = _check_inputs(y, points, abar)
    return (y - np.sqrt(abar) * pts) / np.sqrt(1.0 - abar)


def _shifted_weights(eps: np.ndarray, floor: float):
    logw = -0.5 * np.einsum("ij,ij->i", eps, eps)
    shifted = logw - logw.max()
    keep = shifted >= floor
    return np.exp(shifted[keep]), keep


def stable_noise(
    y: np.ndarray,
    class_points: np.ndarray,
    abar: float,
    config: StablePointConfig = StablePointConfig(),
) -> np.ndarray:
    """The weighted residual average; see module docstring."""
    eps = residuals(y, class_points, abar)
    w, keep = _shifted_weights(eps, config.log_weight_floor)
    return (w @ eps[keep]) / w.sum()


def loss_at(
    eta: np.ndarray,
    y: np.ndarray,
    class_points: np.ndarray,
    abar: float,
    config: StablePointConfig = StablePointConfig(),
) -> float:
    """Normalized weighted quadratic loss whose minimizer is stable_noise.

    Uses the same shifted weights and drop rule as the evaluator, so the two
    form a consistent pair for stationarity checks.
    """
    eta = np.asarray(eta, dtype=np.float64)
    eps = residuals(y, class_points, abar)
    if eta.shape != (eps.shape[1],):
        raise DimensionError(f"eta shape {eta.shape} does not match dim {eps.shape[1]}")
    w, keep = _shifted_weights(eps, config.log_weight_floor)
    diffs = eta - eps[keep]
    return float((w @ np.einsum("ij,ij->i", diffs, diffs)) / w.sum())
