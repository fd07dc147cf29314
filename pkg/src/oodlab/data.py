"""Datasets (Gaussian blobs, IDX files) and the known/unknown class split."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Stream, make_rng
from .scores import UNKNOWN_LABEL

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# minimum pairwise angle between blob centres
MIN_CENTRE_ANGLE_DEG = 15.0


class IDXFormatError(ValueError):
    def __init__(self, message: str, offset: int, path=None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} (byte offset {offset})")
        self.offset = offset
        self.path = path


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) int64
    class_count: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs must be (n, d) with one label per row")
        # UNKNOWN_LABEL marks held-out classes after a split
        if self.labels.size and (self.labels.max() >= self.class_count or self.labels.min() < UNKNOWN_LABEL):
            raise ValueError("labels out of range for class_count")

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    known_classes: tuple[int, ...]
    unknown_classes: tuple[int, ...]
    seed: int

    def __post_init__(self):
        if not self.known_classes:
            raise ValueError("at least one known class is required")
        if set(self.known_classes) & set(self.unknown_classes):
            raise ValueError("known and unknown classes overlap")


@dataclass
class SplitDatasets:
    train_known: Dataset
    test_known: Dataset
    test_unknown: Dataset  # labels are all UNKNOWN_LABEL; class_count kept for bookkeeping
    spec: SplitSpec


def _centres(rng: np.random.Generator, k: int, d: int, radius: float) -> np.ndarray:
    cos_limit = math.cos(math.radians(MIN_CENTRE_ANGLE_DEG))
    centres: list[np.ndarray] = []
    attempts = 0
    while len(centres) < k:
        attempts += 1
        if attempts > 100_000:
            raise RuntimeError(f"could not place {k} centres {MIN_CENTRE_ANGLE_DEG} deg apart in {d} dims")
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        if all(float(v @ c) < cos_limit for c in centres):
            centres.append(v)
    return radius * np.stack(centres)


def gen_blobs(n_classes: int, dim: int, n_per_class: int, separation: float, noise: float,
              seed: int, n_test_per_class: int = 0) -> Dataset | tuple[Dataset, Dataset]:
    """Isotropic Gaussian blobs around centres on a sphere of radius ``separation``.

    With ``n_test_per_class > 0`` a second dataset drawn from the same centres
    is returned as ``(train, test)``.
    """
    if n_classes < 2 or dim < 2:
        raise ValueError("need at least 2 classes and 2 dimensions")
    rng = make_rng(seed, Stream.DATA)
    centres = _centres(rng, n_classes, dim, separation)

    def draw(per_class: int) -> Dataset:
        labels = np.repeat(np.arange(n_classes), per_class)
        x = centres[labels] + noise * rng.standard_normal((labels.size, dim))
        return Dataset(x, labels, n_classes)

    train = draw(n_per_class)
    if n_test_per_class:
        return train, draw(n_test_per_class)
    return train


def _read_header(buf: bytes, magic: int, n_fields: int, path) -> tuple[int, ...]:
    need = 4 * (1 + n_fields)
    if len(buf) < 4:
        raise IDXFormatError("file too short for magic number", len(buf), path)
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise IDXFormatError(f"bad magic 0x{got:08x}, expected 0x{magic:08x}", 0, path)
    if len(buf) < need:
        raise IDXFormatError("truncated header", len(buf), path)
    return struct.unpack_from(f">{n_fields}I", buf, 4)


def parse_idx_images(buf: bytes, path=None) -> np.ndarray:
    n, rows, cols = _read_header(buf, IDX_IMAGES_MAGIC, 3, path)
    payload = n * rows * cols
    if len(buf) - 16 < payload:
        raise IDXFormatError(f"truncated pixel payload: expected {payload} bytes", len(buf), path)
    pixels = np.frombuffer(buf, dtype=np.uint8, count=payload, offset=16)
    return pixels.reshape(n, rows * cols).astype(np.float64) / 255.0


def parse_idx_labels(buf: bytes, path=None) -> np.ndarray:
    (n,) = _read_header(buf, IDX_LABELS_MAGIC, 1, path)
    if len(buf) - 8 < n:
        raise IDXFormatError(f"truncated label payload: expected {n} bytes", len(buf), path)
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = parse_idx_images(Path(images_path).read_bytes(), images_path)
    labels = parse_idx_labels(Path(labels_path).read_bytes(), labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"label count {labels.shape[0]} != image count {images.shape[0]}", 4, labels_path
        )
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 0
    return Dataset(images, labels, class_count)


def idx_images_bytes(images: np.ndarray) -> bytes:
    """Encode ``(n, rows, cols)`` uint8 images as an IDX3 file."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    return struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()


def idx_labels_bytes(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", IDX_LABELS_MAGIC, labels.size) + labels.tobytes()


FIXTURE_IMAGES = np.array([[[0, 255], [128, 0]], [[1, 2], [3, 4]]], dtype=np.uint8)
FIXTURE_LABELS = np.array([3, 7], dtype=np.uint8)
FIXTURE_FILES = {
    "images": "fixture-images.idx3-ubyte",
    "labels": "fixture-labels.idx1-ubyte",
    "bad_magic": "fixture-bad-magic.idx3-ubyte",
}


def write_fixtures(directory) -> dict[str, Path]:
    """Write the two-image 2x2 IDX pair plus a copy with a corrupted magic."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images = idx_images_bytes(FIXTURE_IMAGES)
    bad = struct.pack(">I", 0x00000802) + images[4:]
    paths = {key: directory / name for key, name in FIXTURE_FILES.items()}
    paths["images"].write_bytes(images)
    paths["labels"].write_bytes(idx_labels_bytes(FIXTURE_LABELS))
    paths["bad_magic"].write_bytes(bad)
    return paths


def make_split(n_classes: int, n_known: int, seed: int) -> SplitSpec:
    if not 1 <= n_known < n_classes:
        raise ValueError(f"need 1 <= n_known < {n_classes}, got {n_known}")
    order = make_rng(seed, Stream.SPLIT).permutation(n_classes)
    known = tuple(sorted(int(c) for c in order[:n_known]))
    unknown = tuple(sorted(int(c) for c in order[n_known:]))
    return SplitSpec(known, unknown, seed)


def all_known_split(n_classes: int, seed: int = 0) -> SplitSpec:
    return SplitSpec(tuple(range(n_classes)), (), seed)


def apply_split(train: Dataset, test: Dataset, spec: SplitSpec) -> SplitDatasets:
    """Filter to known/unknown classes and remap known labels to 0..N-1."""
    remap = np.full(max(train.class_count, test.class_count), -2, dtype=np.int64)
    remap[list(spec.known_classes)] = np.arange(len(spec.known_classes))
    n_known = len(spec.known_classes)

    def known_part(ds: Dataset) -> Dataset:
        keep = np.isin(ds.labels, spec.known_classes)
        return Dataset(ds.inputs[keep], remap[ds.labels[keep]], n_known)

    unknown_mask = np.isin(test.labels, spec.unknown_classes)
    unknown = Dataset(test.inputs[unknown_mask], np.full(int(unknown_mask.sum()), UNKNOWN_LABEL), n_known)
    return SplitDatasets(known_part(train), known_part(test), unknown, spec)
