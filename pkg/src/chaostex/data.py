"""Synthetic texture corpus, image-folder datasets and stratified k-fold splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import IMAGE_SUFFIXES, read_image, write_image

__all__ = [
    "LabeledDataset",
    "SynthSpec",
    "gen_synthetic_textures",
    "load_image_folder",
    "save_image_folder",
    "kfold_split",
    "FAMILIES",
]

FAMILIES = ("grating", "checker", "noise")


@dataclass
class LabeledDataset:
    """Images (each ``(H, W, C)`` float in [0, 1]) with dense integer labels."""

    images: list[np.ndarray]
    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        n = len(self.class_names)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= n):
            raise ValueError("labels must be dense in [0, n_classes)")

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i], int(self.labels[i])

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def channels(self) -> int:
        return self.images[0].shape[2]

    @property
    def min_side(self) -> int:
        return min(min(im.shape[:2]) for im in self.images)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset([self.images[i] for i in idx], self.labels[idx], list(self.class_names))


@dataclass(frozen=True)
class SynthSpec:
    """Procedural corpus description.

    Class ``c`` belongs to family ``FAMILIES[c % 3]``; ``c // 3`` selects its
    parameters within the family (grating orientation/frequency band,
    checkerboard period, noise power-law exponent).  Every sample also gets
    nuisance variation that carries no class information: contrast, mean
    brightness, a log-uniform gamma and additive Gaussian pixel noise.
    """

    n_classes: int = 5
    n_per_class: int = 40
    size: int = 32
    seed: int = 7
    orientation_jitter: float = math.radians(10.0)
    contrast_range: tuple[float, float] = (0.1, 1.0)
    mean_range: tuple[float, float] = (0.15, 0.85)
    gamma_range: tuple[float, float] = (1.0 / 3.0, 3.0)
    noise_std: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.size < 16:
            raise ValueError("size must be >= 16")

    def class_name(self, c: int) -> str:
        return f"{FAMILIES[c % 3]}{c // 3}"


def _grating(rng, size, idx, spec: SynthSpec):
    theta = math.radians(67.5 * idx) + rng.uniform(-1, 1) * spec.orientation_jitter
    lo, hi = (2.5, 4.0) if idx % 2 == 0 else (5.5, 8.0)
    freq = rng.uniform(lo, hi) / size
    phase = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)


def _checker(rng, size, idx, spec: SynthSpec):
    period = 3.0 + 3.0 * idx
    theta = rng.uniform(-1, 1) * spec.orientation_jitter
    ox, oy = rng.uniform(0, 2 * period, size=2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = (xx * math.cos(theta) + yy * math.sin(theta) + ox) * math.pi / period
    v = (-xx * math.sin(theta) + yy * math.cos(theta) + oy) * math.pi / period
    return np.tanh(4.0 * np.sin(u) * np.sin(v))


def _noise(rng, size, idx, spec: SynthSpec):
    beta = 0.5 + 1.25 * idx
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    amp = f ** (-beta / 2.0)
    amp[0, 0] = 0.0
    spectrum = amp * (rng.normal(size=amp.shape) + 1j * rng.normal(size=amp.shape))
    field = np.fft.irfft2(spectrum, s=(size, size))
    field = field / (np.abs(field).max() + 1e-12)
    return field


_GENERATORS = {"grating": _grating, "checker": _checker, "noise": _noise}


def gen_synthetic_textures(spec: SynthSpec) -> LabeledDataset:
    """Deterministic procedural texture corpus, single channel, float64.

    Each sample draws its own phase/orientation jitter, contrast and mean
    brightness from the stream ``default_rng([seed, class, index])``.
    """
    images, labels = [], []
    for c in range(spec.n_classes):
        family = FAMILIES[c % 3]
        gen = _GENERATORS[family]
        for j in range(spec.n_per_class):
            rng = np.random.default_rng([spec.seed, c, j])
            pattern = gen(rng, spec.size, c // 3, spec)
            contrast = rng.uniform(*spec.contrast_range)
            mean = rng.uniform(*spec.mean_range)
            img = np.clip(mean + 0.5 * contrast * pattern, 0.0, 1.0)
            log_gamma = rng.uniform(*np.log(spec.gamma_range))
            img = img ** math.exp(log_gamma)
            if spec.noise_std:
                img = np.clip(img + rng.normal(0.0, spec.noise_std, size=img.shape), 0.0, 1.0)
            images.append(img[:, :, None])
            labels.append(c)
    names = [spec.class_name(c) for c in range(spec.n_classes)]
    return LabeledDataset(images, np.array(labels), names)


def load_image_folder(path) -> LabeledDataset:
    """One subdirectory per class (sorted by name gives the class id), each
    holding PNG or PPM files."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"{root}: no class subdirectories")
    images, labels = [], []
    for c, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"class directory {d} holds no images")
        for f in files:
            images.append(read_image(f))
            labels.append(c)
    channels = {im.shape[2] for im in images}
    if len(channels) > 1:
        raise ValueError(f"{root}: mixed channel counts {sorted(channels)}")
    return LabeledDataset(images, np.array(labels), [d.name for d in class_dirs])


def save_image_folder(ds: LabeledDataset, out, suffix: str = ".png") -> Path:
    """Write a class-folder tree plus ``manifest.csv`` (path, label).

    Folders are named ``{label:02d}_{class name}`` so that sorted order, which
    :func:`load_image_folder` uses for class ids, reproduces the labels.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(ds.n_classes - 1)))
    dirs = [f"{c:0{width}d}_{name}" for c, name in enumerate(ds.class_names)]
    counters = [0] * ds.n_classes
    rows = []
    for img, label in zip(ds.images, ds.labels):
        label = int(label)
        d = out / dirs[label]
        d.mkdir(exist_ok=True)
        rel = Path(dirs[label]) / f"{counters[label]:05d}{suffix}"
        counters[label] += 1
        write_image(out / rel, img)
        rows.append((rel.as_posix(), label))
    manifest = out / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"])
        w.writerows(rows)
    return manifest


def kfold_split(ds_or_labels, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold partition as ``(train_idx, val_idx)`` pairs.

    Each class is shuffled and dealt round-robin over the folds, with the
    dealing position carried over between classes, so every class is split
    within one item of even and fold sizes differ by at most one.
    """
    labels = ds_or_labels.labels if isinstance(ds_or_labels, LabeledDataset) else np.asarray(ds_or_labels)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    classes, counts = np.unique(labels, return_counts=True)
    small = [int(c) for c, n in zip(classes, counts) if n < k]
    if small:
        raise ValueError(f"classes {small} have fewer than k={k} items")
    rng = np.random.default_rng([seed, 0x5F])
    assignment = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for c in classes:
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = (pos + np.arange(len(idx))) % k
        pos = (pos + len(idx)) % k
    all_idx = np.arange(len(labels))
    return [(all_idx[assignment != f], all_idx[assignment == f]) for f in range(k)]
