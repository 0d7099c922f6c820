"""Predictor-corrector sampling of the reverse-time variance-exploding SDE.

Arrays are treated as ``(..., H, W, C)``: the last three axes form one
sample and any leading axes index independent chains. Norms in the corrector
are taken per chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

SNR = 0.075


@dataclass(frozen=True)
class SamplerConfig:
    corrector_steps: int = 1
    snr: float = SNR
    seed: int = 0

    def __post_init__(self):
        if self.corrector_steps < 0:
            raise ValueError("corrector_steps must be >= 0")
        if self.snr <= 0:
            raise ValueError("snr must be positive")


def _check_finite(arr, what, i=None):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite {what}", i)


def predictor_step(x, i: int, model, z) -> np.ndarray:
    """Reverse-diffusion step from level ``i + 1`` down to level ``i``.

    ``x + (s[i+1]^2 - s[i]^2) * score(x, i+1) + sqrt(s[i+1]^2 - s[i]^2) * z``
    """
    sig = model.schedule.sigmas
    if not 0 <= i < len(sig) - 1:
        raise ValueError(f"predictor index {i} outside [0, {len(sig) - 1})")
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != x.shape:
        raise ValueError(f"noise shape {z.shape} does not match {x.shape}")
    dvar = sig[i + 1] ** 2 - sig[i] ** 2
    s = model.score(x, i + 1)
    _check_finite(s, "score", i)
    return x + dvar * s + np.sqrt(dvar) * z


def _chain_norm(a):
    return np.sqrt(np.sum(a * a, axis=(-3, -2, -1), keepdims=True))


def corrector_step(x, i: int, model, z, snr: float = SNR) -> np.ndarray:
    """One Langevin correction at level ``i``.

    The step size is ``eps = 2 * (snr * |z| / |score|)^2`` per chain; a chain
    whose score is exactly zero is left unchanged.
    """
    if snr <= 0:
        raise ValueError("snr must be positive")
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    s = model.score(x, i)
    _check_finite(s, "score", i)
    if x.ndim < 3:
        s_norm = np.sqrt(np.sum(s * s))
        z_norm = np.sqrt(np.sum(z * z))
    else:
        s_norm = _chain_norm(s)
        z_norm = _chain_norm(z)
    safe = np.where(s_norm > 0, s_norm, 1.0)
    eps = np.where(s_norm > 0, 2.0 * (snr * z_norm / safe) ** 2, 0.0)
    return x + eps * s + np.sqrt(2.0 * eps) * z


def sample_prior(shape, schedule, rng) -> np.ndarray:
    """Draw from ``N(0, sigma_max^2 I)``."""
    return rng.standard_normal(shape) * schedule.sigma_max


def reverse_sample(model, shape, config: SamplerConfig | None = None, rng=None,
                   callback=None) -> np.ndarray:
    """Run the full predictor-corrector chain from the prior to level 0.

    The final predictor step (to level 0) adds no noise. ``callback(i, x)``
    sees the state after each outer iteration.
    """
    cfg = config or SamplerConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    sched = model.schedule
    x = sample_prior(shape, sched, rng)
    for i in range(sched.n - 2, -1, -1):
        z = rng.standard_normal(shape) if i > 0 else np.zeros(shape)
        x = predictor_step(x, i, model, z)
        for _ in range(cfg.corrector_steps):
            x = corrector_step(x, i, model, rng.standard_normal(shape), cfg.snr)
        if callback is not None:
            callback(i, x)
    return x
