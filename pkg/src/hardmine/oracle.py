"""Labeling tools: map a real or synthesized input to its ground truth.

Every oracle counts the labels it hands out, since annotation cost is the
budget the whole training loop is measured against.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from hardmine import kernels


class OracleError(ValueError):
    pass


def pseudo_stress_map(mask, threshold: float = 0.5) -> np.ndarray:
    """Max-normalized Euclidean distance transform of the binarized mask.

    Foreground is ``mask >= threshold``; each foreground pixel gets its distance
    to the nearest background pixel (pixels beyond the border count as
    background), divided by the largest such distance. Background is 0 and an
    empty foreground yields all zeros.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2 or min(mask.shape) < 1:
        raise ValueError(f"pseudo_stress_map expects an HxW mask, got shape {mask.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    fg = mask >= threshold
    if not fg.any():
        return np.zeros(mask.shape)
    dist = np.sqrt(kernels.edt_squared(fg))
    return dist / dist.max()


class Oracle:
    kind = "base"

    def __init__(self):
        self.calls = 0

    def label(self, x, sample_id: int | None = None):
        self.calls += 1
        return self._label(x, sample_id)

    def label_batch(self, xs, sample_ids=None) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        ids = [None] * len(xs) if sample_ids is None else list(sample_ids)
        return np.array([self.label(x, i) for x, i in zip(xs, ids)])

    def _label(self, x, sample_id):
        raise NotImplementedError


def _check_domain(x, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != width:
        raise OracleError(f"input width {x.size} does not match oracle width {width}")
    if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
        raise OracleError("oracle input outside [0, 1]")
    return x


class DatasetLookupOracle(Oracle):
    """Returns stored annotations; only real samples (with an id) can be labeled."""

    kind = "dataset_lookup"

    def __init__(self, dataset):
        super().__init__()
        self.dataset = dataset

    def _label(self, x, sample_id):
        if sample_id is None:
            raise OracleError("dataset_lookup cannot label a synthesized sample")
        return self.dataset.label_of(sample_id)


class AnalyticMapOracle(Oracle):
    """Labels a flattened HxW mask with its pseudo stress map (flattened)."""

    kind = "analytic_map"

    def __init__(self, shape: tuple[int, int], threshold: float = 0.5):
        super().__init__()
        self.shape = tuple(shape)
        self.threshold = threshold

    def _label(self, x, sample_id):
        x = _check_domain(x, self.shape[0] * self.shape[1])
        return pseudo_stress_map(x.reshape(self.shape), self.threshold).reshape(-1)


class AnalyticClassOracle(Oracle):
    """Labels inputs with a deterministic class rule ``rule(x) -> int``."""

    kind = "analytic_class"

    def __init__(self, rule: Callable[[np.ndarray], int], width: int):
        super().__init__()
        self.rule = rule
        self.width = width

    def _label(self, x, sample_id):
        return int(self.rule(_check_domain(x, self.width)))


def nearest_center_rule(centers) -> Callable[[np.ndarray], int]:
    centers = np.asarray(centers, dtype=np.float64)

    def rule(x: np.ndarray) -> int:
        d = ((centers - x) ** 2).sum(axis=1)
        return int(np.argmin(d))

    return rule
