"""Dataset parsing, subsampling and partitioning across workers."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "BYZADMM_DATA_DIR"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError("features must be (n, d) with one label per row")
        if self.features.shape[0] < 1:
            raise ConfigError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ConfigError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("dataset contains non-finite features")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.class_count)


def maybe_gunzip(blob: bytes) -> bytes:
    if blob[:2] == b"\x1f\x8b":
        return gzip.decompress(blob)
    return blob


def _idx_header(blob: bytes, magic: int, ndim: int, what: str):
    if len(blob) < 4 + 4 * ndim:
        raise ParseError(f"truncated {what} header", offset=len(blob))
    found = struct.unpack_from(">I", blob, 0)[0]
    if found != magic:
        raise ParseError(f"unexpected magic 0x{found:08x} in {what} file, expected 0x{magic:08x}", offset=0)
    return struct.unpack_from(">" + "I" * ndim, blob, 4)


def parse_idx(images: bytes, labels: bytes, class_count: int = 10) -> Dataset:
    """Decode an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = maybe_gunzip(images)
    labels = maybe_gunzip(labels)
    n, rows, cols = _idx_header(images, IDX_IMAGES_MAGIC, 3, "images")
    (n_labels,) = _idx_header(labels, IDX_LABELS_MAGIC, 1, "labels")
    if n != n_labels:
        raise ParseError(f"image count {n} does not match label count {n_labels}", offset=4)
    need = 16 + n * rows * cols
    if len(images) < need:
        raise ParseError(f"image payload truncated: need {need} bytes, have {len(images)}", offset=len(images))
    if len(labels) < 8 + n:
        raise ParseError(f"label payload truncated: need {8 + n} bytes, have {len(labels)}", offset=len(labels))
    pixels = np.frombuffer(images, dtype=np.uint8, count=n * rows * cols, offset=16)
    y = np.frombuffer(labels, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    if n and y.max() >= class_count:
        bad = int(np.argmax(y >= class_count))
        raise ParseError(f"label {y[bad]} out of range for {class_count} classes", offset=8 + bad)
    return Dataset(pixels.reshape(n, rows * cols) / 255.0, y, class_count)


def write_idx(ds: Dataset, shape: tuple[int, int]) -> tuple[bytes, bytes]:
    """Inverse of :func:`parse_idx` for byte-valued features (multiples of 1/255)."""
    rows, cols = shape
    if rows * cols != ds.n_features:
        raise ConfigError(f"shape {shape} does not match {ds.n_features} features")
    pixels = np.rint(ds.features * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise ConfigError("features are not byte-valued")
    n = len(ds)
    images = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.astype(np.uint8).tobytes()
    labels = struct.pack(">II", IDX_LABELS_MAGIC, n) + ds.labels.astype(np.uint8).tobytes()
    return images, labels


def parse_libsvm(text: str, d_features: int) -> Dataset:
    """Dense rows from ``label idx:val ...`` lines with 1-based, increasing indices.

    Labels are remapped to contiguous classes in sorted order of the raw labels.
    """
    raw_labels = []
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        try:
            raw_labels.append(float(parts[0]))
        except ValueError:
            raise ParseError(f"non-numeric label {parts[0]!r}", line=lineno) from None
        row = np.zeros(d_features)
        last = 0
        for pair in parts[1:]:
            idx, sep, val = pair.partition(":")
            if not sep:
                raise ParseError(f"malformed pair {pair!r}", line=lineno)
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise ParseError(f"malformed pair {pair!r}", line=lineno) from None
            if j <= last:
                raise ParseError(f"index {j} not strictly increasing", line=lineno)
            if j > d_features:
                raise ParseError(f"index {j} exceeds {d_features} features", line=lineno)
            if not np.isfinite(v):
                raise ParseError(f"non-finite value in {pair!r}", line=lineno)
            row[j - 1] = v
            last = j
        rows.append(row)
    if not rows:
        raise ParseError("no samples", line=0)
    classes, y = np.unique(np.asarray(raw_labels), return_inverse=True)
    return Dataset(np.vstack(rows), y, len(classes))


def read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def load_idx_pair(images_path, labels_path, class_count: int = 10) -> Dataset:
    return parse_idx(read_bytes(images_path), read_bytes(labels_path), class_count)


def load_libsvm(path, d_features: int) -> Dataset:
    return parse_libsvm(maybe_gunzip(read_bytes(path)).decode("ascii"), d_features)


def resolve_data_path(path) -> Path:
    """Relative paths are looked up under ``$BYZADMM_DATA_DIR`` when it is set."""
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if not p.is_absolute() and base and not p.exists():
        return Path(base) / p
    return p


def standardize(train: Dataset, *others: Dataset):
    """Zero-mean, unit-variance columns using training statistics; constant columns are only centered."""
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std[std == 0] = 1.0
    out = [Dataset((ds.features - mean) / std, ds.labels, ds.class_count) for ds in (train, *others)]
    return out if others else out[0]


def stratified_sample(ds: Dataset, size: int, rng: np.random.Generator, exclude=None) -> np.ndarray:
    """Row indices, ``size`` in total, with class proportions kept as close as rounding allows."""
    available = np.ones(len(ds), dtype=bool)
    if exclude is not None:
        available[np.asarray(exclude, dtype=np.int64)] = False
    pool = np.flatnonzero(available)
    if size > len(pool):
        raise ConfigError(f"cannot draw {size} rows from {len(pool)} available")
    labels = ds.labels[pool]
    counts = np.bincount(labels, minlength=ds.class_count)
    quota = np.floor(counts * size / len(pool)).astype(int)
    remainder = counts * size / len(pool) - quota
    for c in np.argsort(-remainder, kind="stable")[: size - quota.sum()]:
        quota[c] += 1
    picked = []
    for c in range(ds.class_count):
        members = pool[labels == c]
        picked.append(rng.choice(members, size=quota[c], replace=False))
    return np.sort(np.concatenate(picked))


@dataclass
class Partition:
    shards: list[np.ndarray]

    def __post_init__(self):
        for i, s in enumerate(self.shards):
            if len(s) == 0:
                raise ConfigError(f"worker {i} received no samples")
        flat = np.concatenate(self.shards)
        if len(np.unique(flat)) != len(flat):
            raise ConfigError("shards overlap")


def partition_iid(ds: Dataset, workers: int, seed: int) -> Partition:
    """Seeded random split with shard sizes differing by at most one."""
    if workers <= 0:
        raise ConfigError("worker count must be positive")
    if len(ds) < workers:
        raise ConfigError(f"{len(ds)} samples cannot cover {workers} workers")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return Partition([np.sort(s) for s in np.array_split(perm, workers)])


def partition_digit_pairs(ds: Dataset, workers: int) -> Partition:
    """Workers ``2c`` and ``2c+1`` split the samples of class ``c`` in half."""
    if workers != 2 * ds.class_count:
        raise ConfigError(f"digit-pair partition needs exactly {2 * ds.class_count} workers, got {workers}")
    shards = []
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        if len(members) < 2:
            raise ConfigError(f"class {c} has fewer than two samples")
        half = (len(members) + 1) // 2
        shards += [members[:half], members[half:]]
    return Partition(shards)


def sample_batch(shard, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw with replacement from the shard."""
    shard = np.asarray(shard)
    if shard.size == 0:
        raise ConfigError("cannot sample from an empty shard")
    return shard[rng.integers(0, shard.size, size=batch_size)]


def synthetic_blobs(n: int = 600, classes: int = 3, features: int = 5, spread: float = 1.0, seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters around random class centers; balanced labels."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 3.0, size=(classes, features))
    y = np.arange(n) % classes
    X = centers[y] + rng.normal(0.0, spread, size=(n, features))
    return Dataset(X, y, classes)
