"""Synthetic classification data, device grouping, and occlusion.

Images are 32x32 grayscale in [0,1]: ten seven-segment-style glyph classes
drawn at 1.0 on a zero background, randomly translated by up to +/-4 px,
then additive Gaussian pixel noise (sigma 0.1) clipped back to [0,1].
Partial observation paints a white square patch at a random position.
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

IMG_SIZE = 32
N_CLASSES = 10
NOISE_SIGMA = 0.1
MAX_SHIFT = 4

# Glyph box: 12 wide x 18 high, centred before translation.
_BOX_W, _BOX_H = 12, 18
_BOX_TOP = (IMG_SIZE - _BOX_H) // 2
_BOX_LEFT = (IMG_SIZE - _BOX_W) // 2

# Segment extents (row0, row1, col0, col1) inside the glyph box.
_SEGMENTS = {
    "a": (0, 2, 2, 10),
    "b": (1, 9, 10, 12),
    "c": (9, 17, 10, 12),
    "d": (16, 18, 2, 10),
    "e": (9, 17, 0, 2),
    "f": (1, 9, 0, 2),
    "g": (8, 10, 2, 10),
}
_CLASS_SEGMENTS = [
    "abcdef",  # 0
    "bc",      # 1
    "abged",   # 2
    "abgcd",   # 3
    "fgbc",    # 4
    "afgcd",   # 5
    "afgedc",  # 6
    "abc",     # 7
    "abcdefg", # 8
    "abcfgd",  # 9
]

DATASET_MAGIC = b"SLDS"


@dataclass
class Sample:
    image: np.ndarray  # (32, 32) float64 in [0, 1]
    label: int


@dataclass
class GroupAssignment:
    n_devices: int
    n_groups: int
    membership: np.ndarray  # (N,) int64, device -> group


@dataclass
class ObservationBatch:
    """Per-device observed images plus simulator-side ground truth."""

    images: np.ndarray        # (N, 32, 32) what each device sees
    corrupted: np.ndarray     # (N,) bool
    labels: np.ndarray        # (N,) int64, label of the device's group image
    clean_images: np.ndarray  # (N, 32, 32) the uncorrupted group image

    @property
    def n_devices(self) -> int:
        return self.images.shape[0]


def _glyph(label: int) -> np.ndarray:
    img = np.zeros((IMG_SIZE, IMG_SIZE))
    for seg in _CLASS_SEGMENTS[label]:
        r0, r1, c0, c1 = _SEGMENTS[seg]
        img[_BOX_TOP + r0:_BOX_TOP + r1, _BOX_LEFT + c0:_BOX_LEFT + c1] = 1.0
    return img


def generate_dataset(n_samples: int, seed: int) -> list[Sample]:
    """Class-balanced glyph samples, reproducible from the seed."""
    if n_samples < N_CLASSES:
        raise ValueError(f"need at least {N_CLASSES} samples")
    rng = np.random.default_rng(seed)
    base = [_glyph(c) for c in range(N_CLASSES)]
    samples = []
    for idx in range(n_samples):
        label = idx % N_CLASSES
        dr, dc = rng.integers(-MAX_SHIFT, MAX_SHIFT + 1, size=2)
        img = np.zeros((IMG_SIZE, IMG_SIZE))
        src = base[label]
        # shift by (dr, dc); glyph box stays inside the canvas by construction
        img[max(0, dr):IMG_SIZE + min(0, dr), max(0, dc):IMG_SIZE + min(0, dc)] = \
            src[max(0, -dr):IMG_SIZE - max(0, dr), max(0, -dc):IMG_SIZE - max(0, dc)]
        img += rng.normal(0.0, NOISE_SIGMA, size=img.shape)
        samples.append(Sample(np.clip(img, 0.0, 1.0), label))
    return samples


def assign_groups(n_devices: int, n_groups: int, rng: np.random.Generator) -> GroupAssignment:
    """Random membership, group sizes as equal as possible, no empty group."""
    if n_groups < 1 or n_groups > n_devices:
        raise ValueError(f"cannot split {n_devices} devices into {n_groups} groups")
    perm = rng.permutation(n_devices)
    membership = np.empty(n_devices, dtype=np.int64)
    base, extra = divmod(n_devices, n_groups)
    start = 0
    for g in range(n_groups):
        size = base + (1 if g < extra else 0)
        membership[perm[start:start + size]] = g
        start += size
    return GroupAssignment(n_devices, n_groups, membership)


def apply_patch(img: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """White square patch of side floor(scale*H) at a uniform position fully inside."""
    if not 0.0 < scale < 1.0:
        raise ValueError(f"patch scale must be in (0,1), got {scale}")
    h, w = img.shape
    side_h, side_w = int(scale * h), int(scale * w)
    out = img.copy()
    if side_h == 0 or side_w == 0:
        return out
    top = int(rng.integers(0, h - side_h + 1))
    left = int(rng.integers(0, w - side_w + 1))
    out[top:top + side_h, left:left + side_w] = 1.0
    return out


def make_observation_batch(samples: Sequence[Sample], groups: GroupAssignment,
                           p: float, scale: float,
                           rng: np.random.Generator) -> ObservationBatch:
    """Each device sees its group image, patch-corrupted with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"corruption probability must be in [0,1], got {p}")
    if len(samples) != groups.n_groups:
        raise ValueError(f"{len(samples)} samples for {groups.n_groups} groups")
    n = groups.n_devices
    images = np.empty((n, IMG_SIZE, IMG_SIZE))
    clean = np.empty((n, IMG_SIZE, IMG_SIZE))
    corrupted = np.zeros(n, dtype=bool)
    labels = np.empty(n, dtype=np.int64)
    for dev in range(n):
        s = samples[groups.membership[dev]]
        clean[dev] = s.image
        labels[dev] = s.label
        if rng.random() < p:
            corrupted[dev] = True
            images[dev] = apply_patch(s.image, scale, rng)
        else:
            images[dev] = s.image.copy()
    return ObservationBatch(images, corrupted, labels, clean)


def save_dataset(path, samples: Sequence[Sample]) -> None:
    """SLDS container: magic, u32 count, then per sample u32 label + 32*32 f64."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", len(samples)))
        for s in samples:
            if s.image.shape != (IMG_SIZE, IMG_SIZE):
                raise ValueError("SLDS stores 32x32 images only")
            fh.write(struct.pack("<I", s.label))
            fh.write(np.ascontiguousarray(s.image, dtype="<f8").tobytes())


def load_dataset(path) -> list[Sample]:
    record = 4 + IMG_SIZE * IMG_SIZE * 8
    with open(path, "rb") as fh:
        if fh.read(4) != DATASET_MAGIC:
            raise ValueError(f"{path}: not a SLDS dataset")
        (count,) = struct.unpack("<I", fh.read(4))
        payload = fh.read()
    if len(payload) != count * record:
        raise ValueError(f"{path}: expected {count} records, payload size mismatch")
    samples = []
    for k in range(count):
        off = k * record
        (label,) = struct.unpack_from("<I", payload, off)
        img = np.frombuffer(payload, dtype="<f8", count=IMG_SIZE * IMG_SIZE,
                            offset=off + 4).reshape(IMG_SIZE, IMG_SIZE).copy()
        samples.append(Sample(img, int(label)))
    return samples


def load_image_dir(path) -> list[Sample]:
    """Alternate ingestion: 8-bit grayscale PNGs named <class>_<id>.png."""
    pattern = re.compile(r"^(\d+)_.+\.png$")
    samples = []
    for name in sorted(os.listdir(path)):
        m = pattern.match(name)
        if not m:
            continue
        label = int(m.group(1))
        if not 0 <= label < N_CLASSES:
            raise ValueError(f"{name}: class {label} out of range")
        img = Image.open(os.path.join(path, name)).convert("L")
        if img.size != (IMG_SIZE, IMG_SIZE):
            raise ValueError(f"{name}: expected {IMG_SIZE}x{IMG_SIZE}, got {img.size}")
        arr = np.asarray(img, dtype=np.float64) / 255.0
        samples.append(Sample(arr, label))
    if not samples:
        raise ValueError(f"{path}: no <class>_<id>.png files found")
    return samples
