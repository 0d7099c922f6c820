from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

SIGMA_MIN = 0.01
SIGMA_MAX = 378.0
NUM_STEPS = 1000


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric noise ladder of the variance-exploding SDE.

    ``sigma(t) = sigma_min * (sigma_max / sigma_min) ** t`` for ``t`` in
    ``(0, 1]``; the discrete ladder samples it at ``t = i / (n - 1)``.
    """

    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    n: int = NUM_STEPS

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.n < 2:
            raise ValueError("need at least two noise levels")

    def sigma(self, t: float) -> float:
        if not 0.0 < t <= 1.0:
            raise ValueError(f"t={t} outside (0, 1]")
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t

    def sigma_step(self, i: int) -> float:
        if not 0 <= i < self.n:
            raise ValueError(f"step {i} outside [0, {self.n})")
        return float(self.sigmas[i])

    @cached_property
    def sigmas(self) -> np.ndarray:
        t = np.arange(self.n) / (self.n - 1)
        s = self.sigma_min * (self.sigma_max / self.sigma_min) ** t
        # pin the endpoints; pow() can be off by an ulp
        s[0], s[-1] = self.sigma_min, self.sigma_max
        return s

    def with_steps(self, n: int) -> "NoiseSchedule":
        return NoiseSchedule(self.sigma_min, self.sigma_max, n)
