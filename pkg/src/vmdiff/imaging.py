"""Image and mask data model, patch geometry, degradation and quality metrics.

Images are ``float64`` arrays of shape ``(H, W, 3)`` with intensities in
``[0, 1]``. Pixel masks are ``uint8`` arrays of shape ``(H, W)`` where 1 marks
a known pixel and 0 a missing one; the same mask gates all three channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

PSNR_IDENTICAL = math.inf
"""Value returned by :func:`psnr` when both inputs are identical."""

MAX_IMAGE_PIXELS = 1 << 26

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def as_image(data) -> np.ndarray:
    """Validate and convert ``data`` to an ``(H, W, 3)`` float image."""
    image = np.asarray(data, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError("image must have positive height and width")
    return image


def as_mask(data) -> np.ndarray:
    mask = np.asarray(data)
    if mask.ndim != 2:
        raise ValueError(f"expected an (H, W) mask, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be 0 (missing) or 1 (known)")
    return mask.astype(np.uint8)


# --------------------------------------------------------------------------
# patch geometry


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping square tiling of a padded canvas.

    The default grid covers a 320x320 canvas with 25 tiles of 64x64, which is
    the geometry used for 256x256 inputs padded by 32 pixels per side.
    """

    canvas: int = 320
    patch_size: int = 64

    def __post_init__(self):
        if self.patch_size <= 0 or self.canvas <= 0:
            raise ValueError("canvas and patch_size must be positive")
        if self.canvas % self.patch_size:
            raise ValueError("canvas must be a multiple of patch_size")

    @property
    def stride(self) -> int:
        return self.patch_size

    @property
    def per_side(self) -> int:
        return self.canvas // self.patch_size

    @property
    def count(self) -> int:
        return self.per_side**2

    def origin(self, n: int) -> tuple[int, int]:
        """Top-left corner of patch ``n`` (zero-based, row-major)."""
        if not 0 <= n < self.count:
            raise ValueError(f"patch index {n} outside [0, {self.count})")
        r, c = divmod(n, self.per_side)
        return r * self.stride, c * self.stride

    def origins(self) -> list[tuple[int, int]]:
        return [self.origin(n) for n in range(self.count)]


def _split(total: int) -> tuple[int, int]:
    before = total // 2
    return before, total - before


def pad_reflect(image, target: int) -> np.ndarray:
    """Pad ``image`` to ``target x target`` by mirroring without repeating the edge.

    Padding is split evenly between the two sides of each axis; an odd
    remainder goes to the bottom/right.
    """
    image = as_image(image)
    h, w, _ = image.shape
    if target < max(h, w):
        raise ValueError(f"target {target} smaller than image {h}x{w}")
    pads = (_split(target - h), _split(target - w), (0, 0))
    return np.pad(image, pads, mode="reflect")


def pad_mask(mask, target: int) -> np.ndarray:
    mask = as_mask(mask)
    h, w = mask.shape
    if target < max(h, w):
        raise ValueError(f"target {target} smaller than mask {h}x{w}")
    return np.pad(mask, (_split(target - h), _split(target - w)), mode="reflect")


def extract_patches(padded, grid: PatchGrid | None = None) -> list[np.ndarray]:
    grid = grid or PatchGrid()
    padded = np.asarray(padded, dtype=np.float64)
    if padded.shape[:2] != (grid.canvas, grid.canvas):
        raise ValueError(
            f"expected a {grid.canvas}x{grid.canvas} canvas, got {padded.shape[:2]}"
        )
    p = grid.patch_size
    return [padded[r : r + p, c : c + p].copy() for r, c in grid.origins()]


def extract_mask_patches(padded_mask, grid: PatchGrid | None = None) -> list[np.ndarray]:
    grid = grid or PatchGrid()
    padded_mask = np.asarray(padded_mask)
    if padded_mask.shape != (grid.canvas, grid.canvas):
        raise ValueError(
            f"expected a {grid.canvas}x{grid.canvas} mask, got {padded_mask.shape}"
        )
    p = grid.patch_size
    return [padded_mask[r : r + p, c : c + p].copy() for r, c in grid.origins()]


def stitch_patches(patches, grid: PatchGrid | None = None, crop: int | None = None) -> np.ndarray:
    """Reassemble tiles produced by :func:`extract_patches` and center-crop.

    ``crop`` defaults to the full canvas (no cropping).
    """
    grid = grid or PatchGrid()
    patches = list(patches)
    if len(patches) != grid.count:
        raise ValueError(f"expected {grid.count} patches, got {len(patches)}")
    p = grid.patch_size
    canvas = np.empty((grid.canvas, grid.canvas, 3))
    for (r, c), patch in zip(grid.origins(), patches):
        patch = np.asarray(patch, dtype=np.float64)
        if patch.shape != (p, p, 3):
            raise ValueError(f"expected {p}x{p}x3 patches, got {patch.shape}")
        canvas[r : r + p, c : c + p] = patch
    if crop is None:
        return canvas
    if not 0 < crop <= grid.canvas:
        raise ValueError(f"crop {crop} outside (0, {grid.canvas}]")
    top = (grid.canvas - crop) // 2
    return canvas[top : top + crop, top : top + crop].copy()


# --------------------------------------------------------------------------
# masks and degradation


def gen_mask(kind: str, params=None, seed: int = 0, shape=(256, 256)) -> np.ndarray:
    """Generate a pixel mask (1 = known, 0 = missing).

    ``random``
        ``params`` is the missing fraction; every pixel goes missing
        independently with that probability.
    ``block``
        ``params`` is ``(x, y, w, h)``; the rectangle with top-left column
        ``x`` and row ``y`` is missing.
    ``text``
        ``params`` is the path of a 1-bit raster; dark pixels (< 128) are
        missing. The raster defines the mask shape.
    """
    if kind == "random":
        fraction = float(params)
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"missing fraction {fraction} outside [0, 1]")
        rng = np.random.default_rng(seed)
        missing = rng.random(shape) < fraction
        return (~missing).astype(np.uint8)
    if kind == "block":
        x, y, w, h = (int(v) for v in params)
        if w < 0 or h < 0 or x < 0 or y < 0:
            raise ValueError("block coordinates must be non-negative")
        mask = np.ones(shape, dtype=np.uint8)
        mask[y : y + h, x : x + w] = 0
        return mask
    if kind == "text":
        return load_mask(params)
    raise ValueError(f"unknown mask kind {kind!r}")


def parse_mask_spec(spec: str):
    """Split ``random:<frac>``, ``block:<x,y,w,h>`` or ``text:<path>``."""
    kind, sep, arg = spec.partition(":")
    if not sep or not arg:
        raise ValueError(f"malformed mask spec {spec!r}")
    if kind == "random":
        return kind, float(arg)
    if kind == "block":
        parts = arg.split(",")
        if len(parts) != 4:
            raise ValueError(f"block mask needs x,y,w,h; got {arg!r}")
        return kind, tuple(int(p) for p in parts)
    if kind == "text":
        return kind, arg
    raise ValueError(f"unknown mask kind {kind!r}")


def mask_from_spec(spec: str, shape=(256, 256), seed: int = 0) -> np.ndarray:
    kind, params = parse_mask_spec(spec)
    mask = gen_mask(kind, params, seed=seed, shape=shape)
    if mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match image {tuple(shape)}")
    return mask


def apply_degradation(x, mask, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Return ``D x + e``; missing pixels are exactly zero."""
    x = as_image(x)
    mask = as_mask(mask)
    if mask.shape != x.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {x.shape[:2]}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    y = x * mask[..., None]
    if noise_sigma > 0:
        noise = np.random.default_rng(seed).standard_normal(x.shape) * noise_sigma
        y = (y + noise) * mask[..., None]
    return y


# --------------------------------------------------------------------------
# metrics


def psnr(x, ref, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB using the per-element MSE.

    Returns :data:`PSNR_IDENTICAL` (``inf``) when the inputs are identical.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((x - ref) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak**2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t**2) / (2 * sigma**2))
    return g / g.sum()


def _valid_filter(channel: np.ndarray, taps: np.ndarray) -> np.ndarray:
    half = len(taps) // 2
    out = correlate1d(channel, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    return out[half : channel.shape[0] - half, half : channel.shape[1] - half]


def ssim(x, ref, peak: float = 1.0) -> float:
    """Mean structural similarity over all fully-contained 11x11 Gaussian windows.

    Statistics use population (biased) weighted moments. The score is
    averaged over windows and then over channels.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if x.ndim == 2:
        x, ref = x[..., None], ref[..., None]
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    taps = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    scores = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], ref[..., ch]
        mu_a = _valid_filter(a, taps)
        mu_b = _valid_filter(b, taps)
        var_a = _valid_filter(a * a, taps) - mu_a**2
        var_b = _valid_filter(b * b, taps) - mu_b**2
        cov = _valid_filter(a * b, taps) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


# --------------------------------------------------------------------------
# file I/O


def _open_raster(path) -> Image.Image:
    path = Path(path)
    try:
        img = Image.open(path)
        if img.width * img.height > MAX_IMAGE_PIXELS:
            raise OSError(f"{path}: image too large ({img.width}x{img.height})")
        img.load()
    except (Image.DecompressionBombError, Image.UnidentifiedImageError) as exc:
        raise OSError(f"{path}: cannot read image ({exc})") from exc
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit raster as an ``(H, W, 3)`` float image in ``[0, 1]``.

    Grayscale files are replicated into three channels; alpha is dropped.
    """
    img = _open_raster(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def to_uint8(image) -> np.ndarray:
    # round half up
    return np.floor(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(image, path) -> None:
    image = as_image(image)
    Image.fromarray(to_uint8(image), mode="RGB").save(Path(path), format="PNG")


def load_mask(path) -> np.ndarray:
    img = _open_raster(path).convert("L")
    return (np.asarray(img) >= 128).astype(np.uint8)


def save_mask(mask, path) -> None:
    mask = as_mask(mask)
    Image.fromarray(mask * 255, mode="L").save(Path(path), format="PNG")
