"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Every key has a default; unknown
keys are rejected. Later sources override earlier ones (defaults, then the
file, then command-line flags).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .diffusion.schedule import NoiseSchedule
from .diffusion.training import LEARNING_RATE, TrainConfig
from .pipeline import InpaintConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class AppConfig:
    inpaint: InpaintConfig = field(default_factory=InpaintConfig)
    checkpoint: str = "checkpoint.bin"
    out: str = ""
    mask: str = "random:0.8"
    train_images: str = ""
    train_steps: int = 2000
    crop_size: int = 64
    learning_rate: float = LEARNING_RATE
    net_features: int = 64
    net_stages: int = 3
    checkpoint_every: int = 0

    def train_config(self, checkpoint_path=None) -> TrainConfig:
        inp = self.inpaint
        return TrainConfig(
            steps=self.train_steps, crop_size=self.crop_size,
            learning_rate=self.learning_rate, ratio=inp.ratio, seed=inp.seed,
            features=self.net_features, stages=self.net_stages,
            schedule=NoiseSchedule(inp.sigma_min, inp.sigma_max, inp.n_steps),
            checkpoint_every=self.checkpoint_every,
            checkpoint_path=Path(checkpoint_path) if checkpoint_path else None,
        )

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self.inpaint)
        out.update({f.name: getattr(self, f.name) for f in fields(self) if f.name != "inpaint"})
        return out


def _field_types() -> dict:
    types = {f.name: f.type for f in fields(InpaintConfig)}
    types.update({f.name: f.type for f in fields(AppConfig) if f.name != "inpaint"})
    return types


KEYS = _field_types()


def _coerce(key: str, raw: str):
    kind = KEYS[key]
    raw = raw.strip()
    if kind in ("bool", bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def parse_pairs(lines, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"{source}:{lineno}: expected key = value")
        if key not in KEYS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_pairs(text.splitlines(), str(path))


def build_config(*overrides: dict) -> AppConfig:
    merged: dict = {}
    for layer in overrides:
        merged.update(layer)
    inpaint_keys = {f.name for f in fields(InpaintConfig)}
    inpaint = InpaintConfig(**{k: v for k, v in merged.items() if k in inpaint_keys})
    rest = {k: v for k, v in merged.items() if k not in inpaint_keys}
    return AppConfig(inpaint=inpaint, **rest)


def dump_config(cfg: AppConfig) -> str:
    lines = []
    for key, value in cfg.as_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
