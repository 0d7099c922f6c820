"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"VMDCKPT\\x00"
    version    uint32
    hlen       uint32    length of the JSON header
    header     hlen bytes, UTF-8 JSON with sorted keys
    payload    concatenated parameter arrays as little-endian float32

The header records the noise schedule, network hyperparameters, training
seed, step count and learning rate, plus a table of ``name``, ``shape`` and
element ``offset`` for every array in the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .net import DenoiserNet
from .schedule import NoiseSchedule

MAGIC = b"VMDCKPT\x00"
VERSION = 1


@dataclass
class Checkpoint:
    schedule: NoiseSchedule
    hparams: dict
    params: dict[str, np.ndarray]
    seed: int
    step: int
    learning_rate: float
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_net(cls, net: DenoiserNet, schedule: NoiseSchedule, *, seed: int,
                 step: int, learning_rate: float, extra=None) -> "Checkpoint":
        params = {name: t.detach().cpu().numpy().astype("<f4")
                  for name, t in net.state_dict().items()}
        return cls(schedule, net.hparams(), params, int(seed), int(step),
                   float(learning_rate), dict(extra or {}))

    def to_net(self, dtype=torch.float32) -> DenoiserNet:
        net = DenoiserNet(**self.hparams)
        state = {k: torch.from_numpy(v.astype(np.float32)) for k, v in self.params.items()}
        net.load_state_dict(state)
        return net.to(dtype).eval()

    def to_bytes(self) -> bytes:
        tensors, chunks, offset = [], [], 0
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.size
        header = {
            "schedule": {"sigma_min": self.schedule.sigma_min,
                         "sigma_max": self.schedule.sigma_max,
                         "n": self.schedule.n},
            "net": self.hparams,
            "seed": self.seed,
            "step": self.step,
            "learning_rate": self.learning_rate,
            "extra": self.extra,
            "tensors": tensors,
        }
        raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<II", VERSION, len(raw)) + raw + b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[: len(MAGIC)] != MAGIC:
            raise OSError("not a checkpoint file (bad magic)")
        pos = len(MAGIC)
        try:
            version, hlen = struct.unpack_from("<II", blob, pos)
            pos += 8
            header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise OSError(f"corrupt checkpoint header: {exc}") from exc
        if version != VERSION:
            raise OSError(f"unsupported checkpoint version {version}")
        pos += hlen
        payload = np.frombuffer(blob, dtype="<f4", offset=pos)
        params = {}
        for t in header["tensors"]:
            n = int(np.prod(t["shape"], dtype=np.int64))
            if t["offset"] + n > payload.size:
                raise OSError(f"truncated checkpoint: tensor {t['name']}")
            params[t["name"]] = payload[t["offset"] : t["offset"] + n].reshape(t["shape"]).copy()
        sched = header["schedule"]
        return cls(
            NoiseSchedule(sched["sigma_min"], sched["sigma_max"], sched["n"]),
            header["net"], params, header["seed"], header["step"],
            header["learning_rate"], header.get("extra", {}),
        )

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
