"""Forward diffusion schedule and the closed-form perturbation.

The process adds Gaussian noise over a fixed number of steps; step t keeps a
fraction alpha_t = 1 - beta_t of the signal, and the closed form jumps
straight to step t through the cumulative product alpha_bar_t:

    x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps

All indices here are zero-based: alpha_bar[0] covers exactly one step.  The
default grid places beta linearly between the endpoints; alpha_literal=True
instead reads the grid as alpha itself (a much harsher process, kept behind
the switch for comparison runs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nodi.errors import ScheduleError, StepError


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise fractions plus the derived cumulative coefficients."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ScheduleError(f"beta must be a non-empty 1-D array, got shape {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise ScheduleError("beta contains non-finite entries")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ScheduleError("every beta must lie strictly inside (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "_alpha", 1.0 - beta)
        object.__setattr__(self, "_alpha_bar", np.cumprod(1.0 - beta))

    @property
    def timesteps(self) -> int:
        return self.beta.shape[0]

    @property
    def alpha(self) -> np.ndarray:
        return self._alpha

    @property
    def alpha_bar(self) -> np.ndarray:
        return self._alpha_bar


def linear_schedule(
    timesteps: int,
    lo: float = 1e-4,
    hi: float = 1e-2,
    alpha_literal: bool = False,
) -> DiffusionSchedule:
    """Evenly spaced grid from lo to hi over the given number of steps.

    By default the grid is beta (signal loss per step, strictly increasing).
    With alpha_literal=True the grid is alpha (signal kept per step), so the
    process destroys almost everything in one step; see module docstring.
    """
    if not isinstance(timesteps, (int, np.integer)) or timesteps < 1:
        raise ScheduleError(f"timesteps must be a positive integer, got {timesteps!r}")
    if not (0.0 < lo < 1.0 and 0.0 < hi < 1.0):
        raise ScheduleError(f"grid endpoints must lie in (0, 1), got lo={lo}, hi={hi}")
    if timesteps > 1 and not lo < hi:
        raise ScheduleError(f"grid needs lo < hi for more than one step, got lo={lo}, hi={hi}")
    grid = np.linspace(lo, hi, timesteps)
    beta = 1.0 - grid if alpha_literal else grid
    return DiffusionSchedule(beta=beta)


def perturb(x0: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form noisy state after t+1 steps (t is a zero-based index)."""
    if not 0 <= t < schedule.timesteps:
        raise StepError(f"step {t} outside [0, {schedule.timesteps})")
    abar = schedule.alpha_bar[t]
    return np.sqrt(abar) * np.asarray(x0) + np.sqrt(1.0 - abar) * np.asarray(eps)
