"""Deterministic synthetic image classification data.

Two generators:

* ``textures``: each class is an oriented sinusoidal grating with its own
  spatial frequency and orientation, plus per-sample phase/orientation/
  amplitude jitter and pixel noise. Every window of the image sees the
  class pattern, so the task is locally solvable.
* ``quadrant-parity``: two diagonally opposite quadrants each carry one of
  two orientations; the (binary) label is whether they match. No single
  window carries the label, so solving it needs cross-window evidence.
* ``seam-phase``: a vertical grating whose right half is either in phase or
  anti-phase with the left half; the phase itself is uniform per sample, so
  each half alone is uninformative and the label lives entirely on the
  center seam, which is aligned with every window boundary.

Everything is reproducible from (seed, spec); train/val splits are disjoint
and class-balanced by construction.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .io import load_wdat, save_wdat

__all__ = [
    "DatasetSpec",
    "SyntheticDataset",
    "gen_dataset",
    "nearest_centroid_accuracy",
    "dataset_from_wdat",
]


@dataclass(frozen=True)
class DatasetSpec:
    seed: int = 0
    n_train: int = 2048
    n_val: int = 512
    classes: int = 4
    size: int = 32
    mode: str = "textures"  # textures | quadrant-parity
    noise: float = 0.12
    phase_jitter: float = 2.0
    orient_jitter: float = 0.08
    amp_min: float = 0.3
    amp_max: float = 0.45
    base_freq: float = 2.0
    freq_step: float = 1.5

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "DatasetSpec":
        return DatasetSpec(**d)


@dataclass
class SyntheticDataset:
    spec: DatasetSpec | None
    train_images: np.ndarray
    train_labels: np.ndarray
    val_images: np.ndarray
    val_labels: np.ndarray

    @property
    def classes(self) -> int:
        return int(max(self.train_labels.max(), self.val_labels.max())) + 1

    def save_wdat(self, train_path, val_path) -> None:
        save_wdat(train_path, np.clip(self.train_images * 255.0, 0, 255).round().astype(np.uint8),
                  self.train_labels.astype(np.uint16))
        save_wdat(val_path, np.clip(self.val_images * 255.0, 0, 255).round().astype(np.uint8),
                  self.val_labels.astype(np.uint16))


def _balanced_labels(n: int, classes: int) -> np.ndarray:
    if n % classes:
        raise ValueError(f"sample count {n} not divisible by {classes} classes")
    return np.tile(np.arange(classes), n // classes)


def _gratings(rng, labels, spec: DatasetSpec) -> np.ndarray:
    n = labels.size
    s = spec.size
    grid = (np.arange(s) + 0.5) / s
    u, v = np.meshgrid(grid, grid, indexing="ij")

    theta = np.pi * (labels + 0.5) / spec.classes
    theta = theta + rng.uniform(-spec.orient_jitter, spec.orient_jitter, n)
    freq = spec.base_freq + spec.freq_step * labels
    phase = rng.uniform(-spec.phase_jitter, spec.phase_jitter, n)
    amp = rng.uniform(spec.amp_min, spec.amp_max, n)

    arg = (2.0 * np.pi * freq[:, None, None]
           * (u[None] * np.cos(theta)[:, None, None]
              + v[None] * np.sin(theta)[:, None, None])
           + phase[:, None, None])
    base = 0.5 + amp[:, None, None] * np.sin(arg)
    images = np.repeat(base[..., None], 3, axis=-1)
    images = images + rng.normal(0.0, spec.noise, images.shape)
    return np.clip(images, 0.0, 1.0).astype(np.float32)


def _parity_patch(rng, bits, spec: DatasetSpec, side: int) -> np.ndarray:
    """Oriented grating patches for one quadrant, orientation chosen by bit."""
    n = bits.size
    grid = (np.arange(side) + 0.5) / side
    u, v = np.meshgrid(grid, grid, indexing="ij")
    theta = np.where(bits == 0, np.pi / 4, 3 * np.pi / 4)
    theta = theta + rng.uniform(-spec.orient_jitter, spec.orient_jitter, n)
    phase = rng.uniform(-spec.phase_jitter, spec.phase_jitter, n)
    amp = rng.uniform(spec.amp_min, spec.amp_max, n)
    freq = spec.base_freq + spec.freq_step
    arg = (2.0 * np.pi * freq
           * (u[None] * np.cos(theta)[:, None, None]
              + v[None] * np.sin(theta)[:, None, None])
           + phase[:, None, None])
    return 0.5 + amp[:, None, None] * np.sin(arg)


def _parity_images(rng, labels, spec: DatasetSpec) -> np.ndarray:
    n = labels.size
    s = spec.size
    half = s // 2
    first = rng.integers(0, 2, n)
    second = first ^ labels  # parity: label 0 = same orientation, 1 = different
    images = np.full((n, s, s), 0.5)
    images[:, :half, :half] = _parity_patch(rng, first, spec, half)
    images[:, half:, half:] = _parity_patch(rng, second, spec, half)
    images = np.repeat(images[..., None], 3, axis=-1)
    images = images + rng.normal(0.0, spec.noise, images.shape)
    return np.clip(images, 0.0, 1.0).astype(np.float32)


def _seam_phase_images(rng, labels, spec: DatasetSpec) -> np.ndarray:
    n = labels.size
    s = spec.size
    cols = np.arange(s)
    phase = rng.uniform(0.0, 2.0 * np.pi, n)
    flip = np.where(labels == 1, np.pi, 0.0)
    period = 4.0  # pixels; one full cycle per stem patch
    left = np.sin(2 * np.pi * cols[None, : s // 2] / period + phase[:, None])
    right = np.sin(2 * np.pi * cols[None, s // 2:] / period
                   + phase[:, None] + flip[:, None])
    rows = np.concatenate([left, right], axis=1)
    images = 0.5 + 0.4 * np.broadcast_to(rows[:, None, :], (n, s, s)).copy()
    images = np.repeat(images[..., None], 3, axis=-1)
    images = images + rng.normal(0.0, 0.05, images.shape)
    return np.clip(images, 0.0, 1.0).astype(np.float32)


def gen_dataset(spec: DatasetSpec) -> SyntheticDataset:
    """Build the full train/val dataset for a spec, deterministically."""
    if spec.classes < 2:
        raise ValueError(f"need at least 2 classes, got {spec.classes}")
    makers = {
        "textures": _gratings,
        "quadrant-parity": _parity_images,
        "seam-phase": _seam_phase_images,
    }
    if spec.mode not in makers:
        raise ValueError(f"unknown mode {spec.mode!r}")
    if spec.mode != "textures" and spec.classes != 2:
        raise ValueError(f"{spec.mode} mode is a 2-class task")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    make = makers[spec.mode]

    train_labels = _balanced_labels(spec.n_train, spec.classes)
    train_images = make(rng, train_labels, spec)
    val_labels = _balanced_labels(spec.n_val, spec.classes)
    val_images = make(rng, val_labels, spec)
    return SyntheticDataset(spec=spec,
                            train_images=train_images,
                            train_labels=train_labels.astype(np.int64),
                            val_images=val_images,
                            val_labels=val_labels.astype(np.int64))


def dataset_from_wdat(train_path, val_path) -> SyntheticDataset:
    """Load an external dataset pair from WDAT files."""
    ti, tl = load_wdat(train_path)
    vi, vl = load_wdat(val_path)
    return SyntheticDataset(spec=None, train_images=ti, train_labels=tl,
                            val_images=vi, val_labels=vl)


def nearest_centroid_accuracy(ds: SyntheticDataset) -> float:
    """Raw-pixel nearest-centroid baseline on the validation split."""
    classes = ds.classes
    flat_train = ds.train_images.reshape(ds.train_images.shape[0], -1)
    flat_val = ds.val_images.reshape(ds.val_images.shape[0], -1)
    centroids = np.stack([
        flat_train[ds.train_labels == c].mean(axis=0) for c in range(classes)
    ])
    d2 = ((flat_val[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    pred = d2.argmin(axis=1)
    return float((pred == ds.val_labels).mean())
