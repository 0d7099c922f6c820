"""Virtual-mask channel perturbation and its inverse.

A stack holds four RGB sub-tensors along the last axis, 12 channels total::

    [R, G, B | RG, G, B | R, GB, B | R, G, BR]

where ``RG`` takes red where the virtual mask is 1 and green where it is 0
(``GB`` and ``BR`` likewise). All arrays are channels-last and may carry any
number of leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# (perturbed channel, donor channel) for each of the three sub-tensors
PAIRS = ((0, 1), (1, 2), (2, 0))
STACK_CHANNELS = 12


@dataclass(frozen=True)
class VirtualMask:
    """Binary perturbation map; 0 marks a perturbed (swapped-in) position."""

    data: np.ndarray
    ratio: float
    seed: int | None = None

    @property
    def perturbed_fraction(self) -> float:
        return float(1.0 - self.data.mean())


def sample_virtual_mask(h: int, w: int, ratio: float, seed=None) -> VirtualMask:
    """Threshold standard-normal draws: ``M = 1`` where ``Z <= ratio``.

    The expected perturbed fraction is ``P(Z > ratio)``, so larger ratios
    perturb fewer pixels. ``seed`` may be an int or a ``numpy`` Generator.
    """
    if h <= 0 or w <= 0:
        raise ValueError("mask dimensions must be positive")
    if not np.isfinite(ratio):
        raise ValueError("ratio must be finite")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((h, w))
    data = (z <= ratio).astype(np.uint8)
    return VirtualMask(data, float(ratio), seed if isinstance(seed, (int, np.integer)) else None)


def _mask_array(mask) -> np.ndarray:
    return np.asarray(mask.data if isinstance(mask, VirtualMask) else mask).astype(bool)


def mpt(patch, mask) -> np.ndarray:
    """Build the 12-channel stack from an RGB patch and a virtual mask."""
    patch = np.asarray(patch, dtype=np.float64)
    m = _mask_array(mask)
    if patch.shape[-1] != 3 or patch.shape[-3:-1] != m.shape[-2:]:
        raise ValueError(f"patch {patch.shape} and mask {m.shape} do not match")
    subs = [patch]
    for target, donor in PAIRS:
        sub = patch.copy()
        sub[..., target] = np.where(m, patch[..., target], patch[..., donor])
        subs.append(sub)
    return np.concatenate(subs, axis=-1)


def identity_stack(patch) -> np.ndarray:
    """Four unperturbed copies of ``patch``; the stack used when encoding is off."""
    patch = np.asarray(patch, dtype=np.float64)
    return np.concatenate([patch] * 4, axis=-1)


def i_mpt(stack, mask) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Recover four RGB estimates from a (possibly updated) stack.

    Estimate 0 is the identity sub-tensor. Estimate ``k`` takes sub-tensor
    ``k`` and restores its perturbed channel: the perturbed-channel value is
    kept where the mask is 1 and the identity sub-tensor's copy of the
    original channel fills the positions where the mask is 0.
    """
    stack = np.asarray(stack, dtype=np.float64)
    m = _mask_array(mask)
    if stack.shape[-1] != STACK_CHANNELS or stack.shape[-3:-1] != m.shape[-2:]:
        raise ValueError(f"stack {stack.shape} and mask {m.shape} do not match")
    ident = stack[..., 0:3]
    estimates = [ident.copy()]
    for k, (target, _) in enumerate(PAIRS, start=1):
        est = stack[..., 3 * k : 3 * k + 3].copy()
        est[..., target] = np.where(m, est[..., target], ident[..., target])
        estimates.append(est)
    return tuple(estimates)


def split_stack(stack) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Read the four sub-tensors directly, without restoring any channel."""
    stack = np.asarray(stack, dtype=np.float64)
    return tuple(stack[..., 3 * k : 3 * k + 3].copy() for k in range(4))


def _pearson(a, b):
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    den = np.sqrt((a * a).sum(axis=-1) * (b * b).sum(axis=-1))
    num = (a * b).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return np.clip(rho, -1.0, 1.0)


def channel_correlations(patch) -> np.ndarray:
    """Pearson correlations ``(rho_RG, rho_GB, rho_BR)`` over all pixels.

    A constant channel gives a correlation of 0. Leading axes are kept, so a
    batch of patches returns an array of shape ``(..., 3)``.
    """
    patch = np.asarray(patch, dtype=np.float64)
    flat = patch.reshape(*patch.shape[:-3], -1, 3)
    flat = np.moveaxis(flat, -1, 0)
    return np.stack([_pearson(flat[t], flat[d]) for t, d in PAIRS], axis=-1)


def fusion_weights(rho, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = temperature * np.asarray(rho, dtype=np.float64)
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def fuse_estimates(estimates, rho, temperature: float = 1.0) -> np.ndarray:
    """Blend the identity estimate with softmax-weighted perturbed estimates.

    ``out = 0.5 * e0 + 0.5 * (w_RG * e1 + w_GB * e2 + w_BR * e3)`` with
    ``w = softmax(temperature * rho)``.
    """
    e0, e1, e2, e3 = (np.asarray(e, dtype=np.float64) for e in estimates)
    if not e0.shape == e1.shape == e2.shape == e3.shape:
        raise ValueError("estimates must share one shape")
    w = fusion_weights(rho, temperature)
    w = w.reshape(w.shape[:-1] + (1,) * (e0.ndim - w.ndim + 1) + (3,))
    perturbed = w[..., 0] * e1 + w[..., 1] * e2 + w[..., 2] * e3
    return 0.5 * e0 + 0.5 * perturbed
