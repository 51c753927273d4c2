"""Datasets: IDX (MNIST distribution format) I/O, synthetic generators, splits."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hardmine.oracle import pseudo_stress_map

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    name: str = "dataset"
    n_classes: int | None = None
    map_shape: tuple[int, int] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.n_classes is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64)
        if not (len(self.inputs) == len(self.labels) == len(self.ids)):
            raise ValueError("inputs, labels and ids must have equal length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")
        self._pos = {int(i): k for k, i in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.n_classes is not None

    def position(self, sample_id: int) -> int:
        return self._pos[int(sample_id)]

    def label_of(self, sample_id: int):
        y = self.labels[self.position(sample_id)]
        return int(y) if self.is_classification else y.copy()

    def subset(self, positions) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.inputs[positions], self.labels[positions], self.ids[positions],
                       self.name, self.n_classes, self.map_shape, dict(self.meta))


# -- IDX --------------------------------------------------------------------


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = math.prod(dims)
    if len(raw) - header != count:
        raise IdxFormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_idx(images_path, labels_path, name: str = "mnist") -> Dataset:
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    n, h, w = images.shape
    return Dataset(images.reshape(n, h * w) / 255.0, labels.astype(np.int64), np.arange(n),
                   name=name, n_classes=int(labels.max()) + 1 if n else 0,
                   meta={"image_shape": [h, w]})


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    h, w = dataset.meta["image_shape"]
    pixels = np.rint(dataset.inputs * 255.0).reshape(len(dataset), h, w)
    write_idx(images_path, pixels)
    write_idx(labels_path, dataset.labels)


# -- synthetic generators ---------------------------------------------------


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    # constant features land mid-range
    return np.where(hi > lo, (x - lo) / span, 0.5)


def gen_blobs(n_per_class: int, n_classes: int = 4, centers=None, sigma: float = 1.0,
              seed: int = 0, n_features: int = 2, center_spread: float = 3.0) -> Dataset:
    """Isotropic Gaussian blobs, min-max scaled to [0, 1] per feature."""
    if n_per_class < 1 or n_classes < 1 or n_features < 1:
        raise ValueError("gen_blobs: sizes must be positive")
    if sigma < 0:
        raise ValueError("gen_blobs: sigma must be non-negative")
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = rng.normal(0.0, center_spread, size=(n_classes, n_features))
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (n_classes, n_features):
        raise ValueError(f"centers must have shape {(n_classes, n_features)}")
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = centers[labels] + sigma * rng.standard_normal((labels.size, n_features))
    order = rng.permutation(labels.size)
    x, labels = x[order], labels[order]
    return Dataset(_minmax(x), labels, np.arange(labels.size), name="blobs", n_classes=n_classes,
                   meta={"sigma": sigma, "n_features": n_features, "seed": seed})


def gen_moons(n: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    if n < 2:
        raise ValueError("gen_moons: need at least 2 samples")
    if noise < 0:
        raise ValueError("gen_moons: noise must be non-negative")
    rng = np.random.default_rng(seed)
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0, np.pi, n_out)
    t_in = np.linspace(0, np.pi, n_in)
    x = np.concatenate([np.c_[np.cos(t_out), np.sin(t_out)],
                        np.c_[1 - np.cos(t_in), 0.5 - np.sin(t_in)]])
    labels = np.r_[np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)]
    x = x + noise * rng.standard_normal(x.shape)
    order = rng.permutation(n)
    return Dataset(_minmax(x[order]), labels[order], np.arange(n), name="moons", n_classes=2,
                   meta={"noise": noise, "seed": seed})


def disk_mask(h: int, w: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return (((yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2) <= radius * radius).astype(np.float64)


def gen_disks(n: int, height: int = 12, width: int = 12, radius_range=(2.0, 5.0),
              seed: int = 0, threshold: float = 0.5) -> Dataset:
    """Binary disk masks paired with their pseudo stress maps (image-to-map task)."""
    r_lo, r_hi = map(float, radius_range)
    if n < 1 or height < 1 or width < 1:
        raise ValueError("gen_disks: sizes must be positive")
    if not 0 < r_lo <= r_hi:
        raise ValueError("gen_disks: radius range must satisfy 0 < lo <= hi")
    rng = np.random.default_rng(seed)
    masks = np.empty((n, height * width))
    maps = np.empty((n, height * width))
    for k in range(n):
        r = rng.uniform(r_lo, r_hi)
        cy = rng.uniform(0.0, height)
        cx = rng.uniform(0.0, width)
        m = disk_mask(height, width, cy, cx, r)
        masks[k] = m.reshape(-1)
        maps[k] = pseudo_stress_map(m, threshold).reshape(-1)
    return Dataset(masks, maps, np.arange(n), name="disks", map_shape=(height, width),
                   meta={"radius_range": [r_lo, r_hi], "seed": seed, "threshold": threshold})


def split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(dataset)
    # round() guards against products like 0.175 * 1200 = 209.99999...
    n_test = math.floor(round(n * test_fraction, 9))
    if n_test == 0 or n_test == n:
        raise ValueError(f"test_fraction {test_fraction} leaves an empty side for N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    test_pos = np.sort(perm[:n_test])
    train_pos = np.sort(perm[n_test:])
    return dataset.subset(train_pos), dataset.subset(test_pos)
