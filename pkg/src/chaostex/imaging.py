"""Images, the chaotic augmentation operator and contrastive view pairs.

An image is a float ``(H, W, C)`` numpy array with every intensity in
[0, 1].  Randomness always comes from an explicit ``numpy.random.Generator``.

RNG consumption order of :func:`make_view_pair` (fixed, so pairs are
reproducible from the generator state):

1. view i:  flip draw, crop row offset, crop column offset
2. k draw for the chaotic operator
3. view j:  flip draw, crop row offset, crop column offset
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image as PILImage

from .dynamics import ChaoticMapSpec, iterate

__all__ = [
    "AugmentConfig",
    "ViewPair",
    "validate_image",
    "chaotic_augment",
    "sample_k",
    "flip_horizontal",
    "crop",
    "center_crop",
    "standard_augment",
    "make_view_pair",
    "image_rng",
    "read_image",
    "write_image",
    "to_uint8",
]

IMAGE_SUFFIXES = (".png", ".ppm")


@dataclass(frozen=True)
class AugmentConfig:
    k_min: int = 1
    k_max: int = 5
    crop_size: int = 28
    flip_prob: float = 0.5
    map: ChaoticMapSpec = field(default_factory=lambda: ChaoticMapSpec("sine"))

    def __post_init__(self):
        if not 0 <= self.k_min <= self.k_max:
            raise ValueError(f"need 0 <= k_min <= k_max, got {self.k_min}, {self.k_max}")
        if self.crop_size < 1:
            raise ValueError("crop_size must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be a probability")


class ViewPair(NamedTuple):
    view_i: np.ndarray
    view_j: np.ndarray
    k: int


def validate_image(img) -> np.ndarray:
    """Return ``img`` as an (H, W, C) array, raising if it is malformed."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or min(img.shape) < 1:
        raise ValueError(f"expected an (H, W, C) image, got shape {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise TypeError(f"image intensities must be floats, got {img.dtype}")
    if np.isnan(img).any() or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def chaotic_augment(img: np.ndarray, spec: ChaoticMapSpec, k: int) -> np.ndarray:
    """Replace every pixel/channel value x by the k-th iterate of the map.

    Computed in float64 and cast back to the input dtype.
    """
    img = validate_image(img)
    if k == 0:
        return img.copy()
    out = iterate(spec, img.astype(np.float64), k)
    return out.astype(img.dtype, copy=False)


def sample_k(rng: np.random.Generator, k_min: int = 1, k_max: int = 5) -> int:
    """Draw k uniformly from {k_min, ..., k_max}."""
    if k_min > k_max:
        raise ValueError(f"invalid k range [{k_min}, {k_max}]")
    return int(rng.integers(k_min, k_max, endpoint=True))


def flip_horizontal(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1, :].copy()


def crop(img: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    return img[top : top + size, left : left + size, :].copy()


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds image size {h}x{w}")
    return crop(img, (h - size) // 2, (w - size) // 2, size)


def standard_augment(img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Random horizontal flip followed by a uniformly placed square crop."""
    h, w = img.shape[:2]
    size = cfg.crop_size
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds image size {h}x{w}")
    flip = rng.random() < cfg.flip_prob
    top = int(rng.integers(0, h - size, endpoint=True))
    left = int(rng.integers(0, w - size, endpoint=True))
    if flip:
        img = img[:, ::-1, :]
    return crop(img, top, left, size)


def make_view_pair(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> ViewPair:
    """Build (T(x), T(Phi(x, map, k))); only the second view sees the map."""
    x = validate_image(x)
    view_i = standard_augment(x, rng, cfg)
    k = sample_k(rng, cfg.k_min, cfg.k_max)
    view_j = standard_augment(chaotic_augment(x, cfg.map, k), rng, cfg)
    return ViewPair(view_i, view_j, k)


def image_rng(seed: int, index: int, *purpose: int) -> np.random.Generator:
    """Independent generator for one image: seeded by (seed, index, *purpose)."""
    return np.random.default_rng([seed, index, *purpose])


# ---------------------------------------------------------------------------
# file I/O

def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Read a PNG or binary PPM file as a float64 (H, W, C) image in [0, 1]."""
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def write_image(path, img: np.ndarray) -> None:
    """Write an image as PNG or binary PPM (P6, maxval 255) by file suffix.

    Single-channel images are stored as grayscale PNG; PPM always stores RGB.
    """
    path = Path(path)
    data = to_uint8(validate_image(img))
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        if data.shape[2] == 1:
            data = np.repeat(data, 3, axis=2)
        PILImage.fromarray(data, "RGB").save(path, format="PPM")
    elif suffix == ".png":
        if data.shape[2] == 1:
            PILImage.fromarray(data[:, :, 0], "L").save(path, format="PNG")
        else:
            PILImage.fromarray(data[:, :, :3], "RGB").save(path, format="PNG")
    else:
        raise ValueError(f"unsupported image format {suffix!r}; use .png or .ppm")
