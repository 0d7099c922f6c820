"""Command-line entry point: ``vmdiff {train,inpaint,eval,mask}``.

Exit status is 0 when every output was written, 1 on runtime failures
(I/O, divergence, non-finite values) and 2 on usage errors. The
``VMDIFF_WORKERS`` environment variable sets the number of compute threads.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import imaging
from .config import build_config, load_config_file, parse_pairs
from .errors import ModelStateError, NumericalError, TrainingDivergedError

log = logging.getLogger("vmdiff")

WORKERS_ENV = "VMDIFF_WORKERS"


class UsageError(Exception):
    pass


def _set_workers():
    import torch

    n = os.environ.get(WORKERS_ENV)
    if n:
        try:
            torch.set_num_threads(max(1, int(n)))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {n!r}") from None


def _resolve(args, **flag_keys):
    """Merge defaults, ``--config`` file, ``--set`` pairs and explicit flags."""
    layers = []
    if args.config:
        layers.append(load_config_file(args.config))
    if args.set:
        try:
            layers.append(parse_pairs(args.set, "--set"))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = value
    layers.append(flags)
    try:
        return build_config(*layers)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _load_model(path, cfg):
    from .diffusion import Checkpoint, NetScoreModel

    if not path or not Path(path).is_file():
        raise ModelStateError(f"checkpoint not found: {path}")
    ckpt = Checkpoint.load(path)
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return NetScoreModel(ckpt.to_net(), cfg.inpaint.schedule), digest


def _expand_images(items) -> list[Path]:
    from .pipeline import list_images

    paths = []
    for item in items:
        p = Path(item)
        paths.extend(list_images(p) if p.is_dir() else [p])
    return paths


def cmd_train(args) -> int:
    from .diffusion import train

    cfg = _resolve(args, checkpoint="checkpoint")
    items = list(args.images) or [s for s in cfg.train_images.split(",") if s]
    paths = _expand_images(items)
    if not paths:
        raise UsageError("train needs at least one image")
    out = Path(args.out or cfg.out or cfg.checkpoint)
    out.parent.mkdir(parents=True, exist_ok=True)
    images = [imaging.load_image(p) for p in paths]
    result = train(images, cfg.train_config(out))
    trace = out.with_name(out.name + ".loss.tsv")
    trace.write_text("step\tloss\n" + "".join(f"{k}\t{v!r}\n" for k, v in enumerate(result.losses, 1)))
    print(f"final loss {result.losses[-1]:.6f}" if result.losses else "final loss n/a")
    print(f"checkpoint {out}")
    return 0


def _mask_for(args, cfg, shape):
    spec = args.mask or cfg.mask
    if ":" in spec and spec.split(":", 1)[0] in ("random", "block", "text"):
        return imaging.mask_from_spec(spec, shape, seed=cfg.inpaint.seed), True
    mask = imaging.load_mask(spec)
    if mask.shape != shape:
        raise UsageError(f"mask {spec} is {mask.shape}, image is {shape}")
    return mask, False


def cmd_inpaint(args) -> int:
    from .pipeline import RunManifest, inpaint

    cfg = _resolve(args, checkpoint="checkpoint")
    model, digest = _load_model(cfg.checkpoint, cfg)
    image = imaging.load_image(args.image)
    mask, generated = _mask_for(args, cfg, image.shape[:2])
    # a generated mask degrades the input; a mask file describes an already degraded input
    y = imaging.apply_degradation(image, mask)
    out = Path(args.out or cfg.out or "restored.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.as_dict(), digest, cfg.inpaint.seed)
    start = time.perf_counter()
    restored = inpaint(y, mask, model, cfg.inpaint, trace=manifest.trace)
    log.info("inpainting took %.1f s", time.perf_counter() - start)
    if not np.all(np.isfinite(restored)):
        raise NumericalError("restored image is not finite")
    imaging.save_image(restored, out)
    manifest.outputs = {"image": str(out), "mask_generated": generated}
    if args.truth:
        truth = imaging.load_image(args.truth)
        manifest.metrics = {"psnr": imaging.psnr(restored, truth), "ssim": imaging.ssim(restored, truth)}
        print(f"PSNR {manifest.metrics['psnr']:.4f} dB")
        print(f"SSIM {manifest.metrics['ssim']:.4f}")
    manifest.save(out.with_suffix(".json"))
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    from .pipeline import evaluate

    cfg = _resolve(args, checkpoint="checkpoint")
    model, digest = _load_model(cfg.checkpoint, cfg)
    out = Path(args.out or cfg.out or "eval")
    start = time.perf_counter()
    table = evaluate(args.truth_dir, args.mask or cfg.mask, model, cfg.inpaint,
                     out_dir=out, checkpoint_id=digest, timed=False)
    log.info("evaluation took %.1f s", time.perf_counter() - start)
    sys.stdout.write(table.to_tsv())
    return 0


def cmd_mask(args) -> int:
    cfg = _resolve(args)
    size = cfg.inpaint.image_size
    mask = imaging.mask_from_spec(args.mask or cfg.mask, (size, size), seed=cfg.inpaint.seed)
    out = Path(args.out or cfg.out or "mask.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    imaging.save_mask(mask, out)
    print(f"wrote {out} ({1 - mask.mean():.4f} missing)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vmdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{train,inpaint,eval,mask}")

    p = sub.add_parser("train", parents=[common], help="learn the score prior from images")
    p.add_argument("images", nargs="*", help="training images or directories")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("inpaint", parents=[common], help="restore one image")
    p.add_argument("image", help="degraded image (or clean image with a generated mask)")
    p.add_argument("--mask", help="mask PNG or spec random:<f> | block:<x,y,w,h> | text:<path>")
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--truth", help="ground truth for PSNR/SSIM")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("eval", parents=[common], help="score a directory of ground-truth images")
    p.add_argument("truth_dir")
    p.add_argument("--mask", help="mask spec")
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mask", parents=[common], help="write a mask PNG")
    p.add_argument("--mask", help="mask spec")
    p.set_defaults(func=cmd_mask)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_workers()
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vmdiff: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ModelStateError, NumericalError, TrainingDivergedError) as exc:
        print(f"vmdiff: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
