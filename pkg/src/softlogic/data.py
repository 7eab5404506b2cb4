"""Dataset ingestion and synthetic generation.

Inputs always live in [0, 1]^m.  Labels are class indices for single-label
tasks and multi-hot vectors for the pairwise constraints, where a label
counts as predicted when its logit is <= 0 (the crisp atom reading).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import stream

__all__ = ["Dataset", "DataFormatError", "load_idx", "blob_centers", "gen_blobs",
           "gen_multilabel"]

_IMAGE_MAGIC = 2051
_LABEL_MAGIC = 2049


class DataFormatError(ValueError):
    """Raised for malformed dataset files."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray          # (N, m) floats within bounds
    labels: np.ndarray          # (N,) int classes or (N, n) multi-hot
    n_labels: int
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ValueError("inputs/labels shape mismatch")
        if np.any(self.inputs < self.lower) or np.any(self.inputs > self.upper):
            raise ValueError("inputs outside declared bounds")
        if self.multilabel:
            if self.labels.shape[1] != self.n_labels:
                raise ValueError("multi-hot labels must have n_labels columns")
        elif len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_labels):
            raise ValueError("class index out of range")

    @property
    def multilabel(self) -> bool:
        return self.labels.ndim == 2

    def __len__(self) -> int:
        return len(self.inputs)


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise DataFormatError(f"truncated file while reading {what}")
    return data


def load_idx(images_path: str, labels_path: str, downsample: int | None = None) -> Dataset:
    """Parse the big-endian IDX pair used by the standard digit datasets.

    Pixels are scaled to [0, 1] by /255; downsample, when given, block-
    averages each image to downsample x downsample (must divide the
    original side lengths).
    """
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != _IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad image magic {magic} (expected {_IMAGE_MAGIC})")
        raw = _read_exact(f, count * rows * cols, "pixels")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)

    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != _LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad label magic {magic} (expected {_LABEL_MAGIC})")
        labels = np.frombuffer(_read_exact(f, lcount, "labels"), dtype=np.uint8)
    if lcount != count:
        raise DataFormatError(f"image/label counts differ: {count} vs {lcount}")

    pixels = images.astype(float) / 255.0
    if downsample is not None:
        d = int(downsample)
        if d < 1 or rows % d or cols % d:
            raise DataFormatError(f"cannot block-average {rows}x{cols} to {d}x{d}")
        br, bc = rows // d, cols // d
        pixels = pixels.reshape(count, d, br, d, bc).mean(axis=(2, 4))
    inputs = pixels.reshape(count, -1)
    n = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(inputs, labels.astype(int), n_labels=max(n, 10))


def blob_centers(classes: int, dim: int) -> np.ndarray:
    """Class centers on a fixed circle of radius 0.25 around the cube
    center (first two axes; remaining axes sit at 0.5)."""
    centers = np.full((classes, max(dim, 1)), 0.5)
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers[:, 0] += 0.25 * np.cos(angles)
    if dim > 1:
        centers[:, 1] += 0.25 * np.sin(angles)
    return centers[:, :dim]


def gen_blobs(seed: int, points_per_class: int, classes: int, dim: int,
              separation: float) -> Dataset:
    """Isotropic Gaussian blobs at deterministic centers, clipped to [0,1]^dim.

    separation is the distance between adjacent centers in blob standard
    deviations: large values give a cleanly separable set, small ones
    overlapping classes.  The seed drives only the sampling noise, so the
    geometry is shared across seeds.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if separation <= 0:
        raise ValueError("separation must be positive")
    centers = blob_centers(classes, dim)
    adjacent = float(np.linalg.norm(centers[0] - centers[1 % classes]))
    std = adjacent / separation
    point_rng = stream(seed, "blob-points")
    inputs = np.empty((classes * points_per_class, dim))
    labels = np.empty(classes * points_per_class, dtype=int)
    for c in range(classes):
        sl = slice(c * points_per_class, (c + 1) * points_per_class)
        inputs[sl] = centers[c] + std * point_rng.normal(size=(points_per_class, dim))
        labels[sl] = c
    return Dataset(np.clip(inputs, 0.0, 1.0), labels, n_labels=classes)


def gen_multilabel(seed: int, points: int, pairs: int, dim: int,
                   margin: float = 0.08) -> Dataset:
    """Multi-hot dataset with one visible face per opposite pair.

    Each pair (2k, 2k+1) gets a random hyperplane through the input cube;
    face 2k is present on one side, face 2k+1 on the other, so ground
    truth satisfies the exactly-one structure by construction.  Points
    closer than margin to any hyperplane are rejected to keep the task
    cleanly learnable.
    """
    rng = stream(seed, "multilabel")
    normals = rng.normal(size=(pairs, dim))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    offsets = normals @ np.full(dim, 0.5)
    kept = np.empty((0, dim))
    while len(kept) < points:
        cand = rng.uniform(0.0, 1.0, size=(4 * points, dim))
        dist = np.abs(cand @ normals.T - offsets)
        cand = cand[np.all(dist >= margin, axis=1)]
        kept = np.vstack([kept, cand])
    inputs = kept[:points]
    labels = np.zeros((points, 2 * pairs), dtype=int)
    side = inputs @ normals.T - offsets > 0
    for k in range(pairs):
        labels[:, 2 * k] = side[:, k]
        labels[:, 2 * k + 1] = ~side[:, k]
    return Dataset(inputs, labels, n_labels=2 * pairs)
