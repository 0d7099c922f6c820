"""Denoising score matching on channel-perturbed image crops."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..encoding import mpt, sample_virtual_mask
from ..errors import TrainingDivergedError
from ..imaging import load_image
from .checkpoint import Checkpoint
from .net import DenoiserNet
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

LEARNING_RATE = 2e-4
PERTURBATION_RATIO = 2.81


def forward_perturb(x0, i: int, z, schedule: NoiseSchedule) -> np.ndarray:
    """Single-shot transition kernel ``x_i = x_0 + sigma_i z``."""
    x0 = np.asarray(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != x0.shape:
        raise ValueError(f"noise shape {z.shape} does not match {x0.shape}")
    return x0 + schedule.sigma_step(i) * z


def chain_perturb(x0, i: int, rng, schedule: NoiseSchedule) -> np.ndarray:
    """Simulate the forward Markov chain from level 0 to level ``i``.

    Starts from ``x0 + sigma_0 z`` and adds independent increments with
    variance ``sigma_{k+1}^2 - sigma_k^2``. Same law as :func:`forward_perturb`.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    s = schedule.sigmas
    x = x0 + s[0] * rng.standard_normal(x0.shape)
    for k in range(i):
        x = x + math.sqrt(s[k + 1] ** 2 - s[k] ** 2) * rng.standard_normal(x0.shape)
    return x


def dsm_target(x0, xt, sigma):
    """Score of the Gaussian transition kernel, ``-(xt - x0) / sigma^2``."""
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")
    return -(xt - x0) / sigma**2


def dsm_loss(model, x0: torch.Tensor, schedule: NoiseSchedule, rng) -> torch.Tensor:
    """Monte-Carlo denoising score matching loss with weight ``sigma^2``.

    ``model(x_t, sigma)`` takes an ``(B, C, H, W)`` tensor and a ``(B,)``
    tensor of noise levels. One level index is drawn uniformly per sample.
    The squared error is averaged over samples and elements, so a model that
    always returns zero scores 1 in expectation.
    """
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    b = x0.shape[0]
    idx = rng.integers(0, schedule.n, size=b)
    sigma = torch.as_tensor(schedule.sigmas[idx], dtype=x0.dtype)
    z = torch.as_tensor(rng.standard_normal(tuple(x0.shape)), dtype=x0.dtype)
    s = sigma.view(-1, *([1] * (x0.dim() - 1)))
    xt = x0 + s * z
    target = dsm_target(x0, xt, s)
    pred = model(xt, sigma)
    return torch.mean(s**2 * (pred - target) ** 2)


@dataclass
class TrainConfig:
    steps: int = 2000
    crop_size: int = 64
    learning_rate: float = LEARNING_RATE
    ratio: float = PERTURBATION_RATIO
    seed: int = 0
    features: int = 64
    stages: int = 3
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    checkpoint_every: int = 0
    checkpoint_path: Path | None = None
    log_every: int = 100


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float]


def random_crop(image: np.ndarray, size: int, rng) -> np.ndarray:
    h, w, _ = image.shape
    r = int(rng.integers(0, h - size + 1))
    c = int(rng.integers(0, w - size + 1))
    return image[r : r + size, c : c + size]


def make_batch(images, size: int, ratio: float, rng) -> np.ndarray:
    """One random crop per image, each encoded with a fresh virtual mask."""
    stacks = []
    for img in images:
        crop = random_crop(img, size, rng)
        stacks.append(mpt(crop, sample_virtual_mask(size, size, ratio, rng)))
    return np.stack(stacks)


def _load_all(images) -> list[np.ndarray]:
    out = []
    for item in images:
        img = load_image(item) if isinstance(item, (str, Path)) else np.asarray(item, dtype=np.float64)
        out.append(img)
    return out


def train(images, config: TrainConfig | None = None, callback=None) -> TrainResult:
    """Fit a :class:`DenoiserNet` to crops of ``images`` (arrays or paths).

    ``callback(step, loss)`` is invoked after every optimizer step. Raises
    :class:`TrainingDivergedError` on a non-finite loss; the error carries the
    last checkpoint whose parameters gave a finite loss, which is also written
    to ``config.checkpoint_path`` when set.
    """
    cfg = config or TrainConfig()
    imgs = _load_all(images)
    if not imgs:
        raise ValueError("need at least one training image")
    for img in imgs:
        if img.shape[0] < cfg.crop_size or img.shape[1] < cfg.crop_size:
            raise ValueError(f"training image {img.shape[:2]} smaller than crop {cfg.crop_size}")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = DenoiserNet(features=cfg.features, stages=cfg.stages,
                      sigma_max=cfg.schedule.sigma_max)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)

    def snapshot(step):
        return Checkpoint.from_net(net, cfg.schedule, seed=cfg.seed, step=step,
                                   learning_rate=cfg.learning_rate,
                                   extra={"crop_size": cfg.crop_size, "ratio": cfg.ratio})

    losses: list[float] = []
    good_state, good_step = None, 0
    for step in range(1, cfg.steps + 1):
        batch = make_batch(imgs, cfg.crop_size, cfg.ratio, rng)
        x0 = torch.from_numpy(batch.transpose(0, 3, 1, 2).astype(np.float32))
        loss = dsm_loss(net, x0, cfg.schedule, rng)
        value = float(loss.detach())
        if not math.isfinite(value):
            if good_state is not None:
                net.load_state_dict(good_state)
            last_good = snapshot(good_step)
            if cfg.checkpoint_path is not None:
                last_good.save(cfg.checkpoint_path)
            raise TrainingDivergedError(f"non-finite loss at step {step}", last_good, step)
        good_state = {k: v.clone() for k, v in net.state_dict().items()}
        good_step = step - 1
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(value)
        if callback is not None:
            callback(step, value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.5f", step, value)
        if cfg.checkpoint_every and cfg.checkpoint_path is not None and step % cfg.checkpoint_every == 0:
            snapshot(step).save(cfg.checkpoint_path)
    final = snapshot(cfg.steps)
    if cfg.checkpoint_path is not None:
        final.save(cfg.checkpoint_path)
    return TrainResult(final, losses)
