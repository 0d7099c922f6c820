"""Score-model contract and closed-form reference scores."""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from .schedule import NoiseSchedule


@runtime_checkable
class ScoreModel(Protocol):
    """Anything that estimates the noisy-data score on a noise ladder.

    ``score(x, i)`` returns an array shaped like ``x`` approximating the
    gradient of the log-density of the data smoothed at ``schedule.sigmas[i]``.
    """

    schedule: NoiseSchedule

    def score(self, x: np.ndarray, i: int) -> np.ndarray: ...

    def with_schedule(self, schedule: NoiseSchedule) -> "ScoreModel": ...


def oracle_score(x, m, s: float, i: int, schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Exact score of ``N(m, s^2 I)`` convolved with ``N(0, sigma_i^2 I)``."""
    schedule = schedule or NoiseSchedule()
    if s < 0:
        raise ValueError("s must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if np.broadcast_shapes(x.shape, m.shape) != x.shape:
        raise ValueError(f"mean shape {m.shape} does not broadcast to {x.shape}")
    sigma = schedule.sigma_step(i)
    return -(x - m) / (s**2 + sigma**2)


class GaussianScoreOracle:
    """Score model for an isotropic Gaussian target ``N(mean, std^2 I)``."""

    def __init__(self, mean, std: float, schedule: NoiseSchedule | None = None):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = float(std)
        self.schedule = schedule or NoiseSchedule()

    def score(self, x, i):
        return oracle_score(x, self.mean, self.std, i, self.schedule)

    def log_density(self, x, i):
        """Unnormalized log-density (summed over trailing axes of ``mean``)."""
        var = self.std**2 + self.schedule.sigma_step(i) ** 2
        d = np.asarray(x, dtype=np.float64) - self.mean
        axes = tuple(range(-self.mean.ndim, 0)) if self.mean.ndim else None
        return -0.5 * np.sum(d * d, axis=axes) / var

    def with_schedule(self, schedule):
        return GaussianScoreOracle(self.mean, self.std, schedule)


class ZeroScore:
    """Score model that always returns zero."""

    def __init__(self, schedule: NoiseSchedule | None = None):
        self.schedule = schedule or NoiseSchedule()

    def score(self, x, i):
        self.schedule.sigma_step(i)
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def with_schedule(self, schedule):
        return ZeroScore(schedule)
