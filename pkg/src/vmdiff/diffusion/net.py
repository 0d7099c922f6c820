"""Compact noise-conditioned convolutional score network."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .schedule import NoiseSchedule

SIGMA_DATA = 0.5


class ResBlock(nn.Module):
    def __init__(self, features: int):
        super().__init__()
        self.conv1 = nn.Conv2d(features, features, 3, padding=1)
        self.conv2 = nn.Conv2d(features, features, 3, padding=1)

    def forward(self, h):
        return h + self.conv2(F.silu(self.conv1(F.silu(h))))


class DenoiserNet(nn.Module):
    """Residual conv net mapping a noisy stack and its noise level to a score.

    The noise level enters as one constant input channel holding
    ``log(sigma) / log(sigma_max)``. Inputs and outputs are wrapped in the
    usual variance-preserving scalings so that the same weights serve every
    noise level from 0.01 to several hundred::

        denoised = c_skip * x + c_out * body(c_in * x, cond)
        score    = (denoised - x) / sigma**2

    Residual stages run at half resolution; spatial dims must be even.
    """

    def __init__(self, channels: int = 12, features: int = 64, stages: int = 3,
                 sigma_max: float = 378.0, sigma_data: float = SIGMA_DATA):
        super().__init__()
        if sigma_max <= 1.0:
            raise ValueError("sigma_max must exceed 1 (it normalizes log(sigma))")
        self.channels = channels
        self.features = features
        self.stages = stages
        self.sigma_max = float(sigma_max)
        self.sigma_data = float(sigma_data)
        self.head = nn.Conv2d(channels + 1, features, 3, padding=1)
        self.down = nn.Conv2d(features, features, 3, stride=2, padding=1)
        self.blocks = nn.Sequential(*[ResBlock(features) for _ in range(stages)])
        self.up = nn.Conv2d(features, features, 3, padding=1)
        self.tail = nn.Conv2d(features, channels, 3, padding=1)

    def hparams(self) -> dict:
        return {"channels": self.channels, "features": self.features,
                "stages": self.stages, "sigma_max": self.sigma_max,
                "sigma_data": self.sigma_data}

    def body(self, x, cond):
        h0 = self.head(torch.cat([x, cond], dim=1))
        h = self.blocks(self.down(F.silu(h0)))
        h = F.interpolate(self.up(F.silu(h)), scale_factor=2, mode="nearest")
        return self.tail(F.silu(h + h0))

    def forward(self, x, sigma):
        """``x``: ``(B, C, H, W)``; ``sigma``: ``(B,)``. Returns the score."""
        s = sigma.to(x.dtype).view(-1, 1, 1, 1)
        sd2 = self.sigma_data**2
        c_in = 1.0 / torch.sqrt(s * s + sd2)
        c_skip = sd2 / (s * s + sd2)
        c_out = s * self.sigma_data * c_in
        cond = (torch.log(s) / math.log(self.sigma_max)).expand(-1, 1, *x.shape[2:])
        denoised = c_skip * x + c_out * self.body(c_in * x, cond)
        return (denoised - x) / (s * s)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


class NetScoreModel:
    """Adapts a :class:`DenoiserNet` to the channels-last numpy score contract.

    ``x`` has shape ``(..., H, W, C)``; leading axes are flattened into one
    batch and evaluated in chunks of ``batch_size``.
    """

    def __init__(self, net: DenoiserNet, schedule: NoiseSchedule | None = None,
                 batch_size: int = 32):
        self.net = net.eval()
        self.schedule = schedule or NoiseSchedule()
        self.batch_size = batch_size
        self._dtype = next(net.parameters()).dtype

    def with_schedule(self, schedule):
        return NetScoreModel(self.net, schedule, self.batch_size)

    def score_at(self, x, sigma: float) -> np.ndarray:
        x = np.asarray(x)
        lead, tail = x.shape[:-3], x.shape[-3:]
        flat = x.reshape((-1,) + tail)
        out = np.empty(flat.shape, dtype=np.float64)
        with torch.no_grad():
            for start in range(0, len(flat), self.batch_size):
                chunk = torch.from_numpy(
                    np.ascontiguousarray(flat[start : start + self.batch_size].transpose(0, 3, 1, 2))
                ).to(self._dtype)
                sig = torch.full((len(chunk),), float(sigma), dtype=self._dtype)
                res = self.net(chunk, sig)
                out[start : start + len(chunk)] = res.permute(0, 2, 3, 1).double().numpy()
        return out.reshape(lead + tail)

    def score(self, x, i):
        return self.score_at(x, self.schedule.sigma_step(i))
