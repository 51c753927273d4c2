"""Hardness-aware sampling in a generator's latent space.

Points are pushed along the normalized gradient of the task loss taken through
``F(G(p))``. Sampling by nearest neighbor (SNN) then snaps each moved point to
the closest embedded real sample and retrieves its annotation. Sampling by
interpolation (SI) decodes the moved point and sends the synthetic sample to
an external labeling tool.
"""

from __future__ import annotations

import contextlib
import csv
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from hardmine import autodiff as ad
from hardmine import kernels
from hardmine.models import LossKind, task_loss

DEGENERATE_NORM = 1e-12


class SamplingError(RuntimeError):
    pass


@dataclass
class LabeledSample:
    x: np.ndarray
    y: Any
    sample_id: int | None = None  # None for synthesized samples

    @property
    def synthesized(self) -> bool:
        return self.sample_id is None


@dataclass
class Provenance:
    method: str
    origin: np.ndarray | None = None
    stepped: np.ndarray | None = None
    source_id: int | None = None
    seed_id: int | None = None
    fallback: bool = False

    @property
    def synthesized(self) -> bool:
        return self.source_id is None


@dataclass
class IncrementalSet:
    round: int
    samples: list[LabeledSample]
    provenance: list[Provenance]

    def __post_init__(self):
        if self.round < 1:
            raise ValueError("round index starts at 1")
        if len(self.samples) != len(self.provenance):
            raise ValueError("one provenance record per sample")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> list[int]:
        return [s.sample_id for s in self.samples if s.sample_id is not None]


@dataclass(frozen=True)
class HardnessDirection:
    direction: np.ndarray
    norm: float

    @property
    def degenerate(self) -> bool:
        return self.norm < DEGENERATE_NORM


@dataclass
class LatentIndex:
    points: np.ndarray
    ids: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if self.points.ndim != 2 or len(self.points) != len(self.ids):
            raise ValueError("index needs an (N, n) point array and N ids")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("index sample ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def rms_pairwise_distance(self) -> float:
        """sqrt of the mean squared distance over ordered pairs i != j."""
        n = len(self)
        if n < 2:
            return 0.0
        centered = self.points - self.points.mean(axis=0)
        mean_sq = (centered * centered).sum(axis=1).mean()
        return float(np.sqrt(2.0 * n / (n - 1) * mean_sq))


@dataclass
class AnchorPool:
    """Latent draws retained across SI rounds, each with the label it was given."""

    points: list[np.ndarray] = field(default_factory=list)
    labels: list[Any] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def add(self, z: np.ndarray, y) -> None:
        self.points.append(np.array(z, dtype=np.float64))
        self.labels.append(y)


# -- gradients, directions, steps -------------------------------------------


@contextlib.contextmanager
def _frozen(*models):
    with contextlib.ExitStack() as stack:
        for m in models:
            if hasattr(m, "frozen"):
                stack.enter_context(m.frozen())
        yield


def _stack_labels(labels: Sequence, kind: LossKind):
    if kind is LossKind.CROSS_ENTROPY:
        return np.asarray(labels, dtype=np.int64).reshape(-1)
    return np.asarray(np.stack([np.asarray(y, dtype=np.float64) for y in labels]))


def latent_loss_grads(F: Callable, G: Callable, points, labels: Sequence,
                      kind: LossKind | str) -> np.ndarray:
    """Per-point gradient of ``sum_k L(F(G(p_k)), y_k)`` w.r.t. the latent points.

    ``F`` and ``G`` are frozen for the call: their parameters and ``.grad``
    slots are left untouched.
    """
    kind = LossKind(kind)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(pts) != len(labels) or len(pts) == 0:
        raise ValueError(f"{len(pts)} points but {len(labels)} labels")
    z = ad.Tensor(pts, requires_grad=True)
    with _frozen(F, G):
        loss = task_loss(kind, F(G(z)), _stack_labels(labels, kind), reduction="sum")
        (g,) = ad.grad(loss, [z])
    if not np.all(np.isfinite(g)):
        raise ad.NonFiniteError("latent_loss_grads: non-finite gradient")
    return g


def point_losses(F: Callable, G: Callable, points, labels: Sequence, kind: LossKind | str) -> np.ndarray:
    kind = LossKind(kind)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with _frozen(F, G):
        per = task_loss(kind, F(G(ad.Tensor(pts))), _stack_labels(labels, kind), reduction="none")
    return per.values.reshape(-1)


def normalize_gradient(g) -> HardnessDirection:
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(g)):
        raise ad.NonFiniteError("normalize_gradient: non-finite input")
    norm = float(np.linalg.norm(g))
    if norm < DEGENERATE_NORM:
        return HardnessDirection(np.zeros_like(g), norm)
    return HardnessDirection(g / norm, norm)


def step(p, d: HardnessDirection | np.ndarray, alpha: float, allow_degenerate: bool = False) -> np.ndarray:
    """Move ``p`` by ``alpha`` along the unit direction ``d``: ``p + alpha * d``."""
    if alpha < 0:
        raise ValueError("step size must be non-negative")
    if isinstance(d, HardnessDirection):
        if d.degenerate and not allow_degenerate:
            raise SamplingError("degenerate direction; caller must choose a fallback")
        d = d.direction
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if p.shape != d.shape:
        raise ad.ShapeError(f"point {p.shape} and direction {d.shape} differ")
    return p + alpha * d


def nearest_neighbor(query, index: LatentIndex, exclude=()) -> tuple[np.ndarray, int]:
    """Closest non-excluded index entry (Euclidean); ties go to the lowest id."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.size != index.dim:
        raise ad.ShapeError(f"query dim {query.size} vs index dim {index.dim}")
    excluded = np.isin(index.ids, np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
    pos = kernels.nearest_scan(index.points, index.ids, query, excluded)
    if pos < 0:
        raise SamplingError("every index entry is excluded")
    return index.points[pos].copy(), int(index.ids[pos])


def embed_dataset(encoder, dataset, batch_size: int = 512) -> LatentIndex:
    if len(dataset) == 0:
        raise ValueError("cannot embed an empty dataset")
    if dataset.input_dim != encoder.input_dim:
        raise ad.ShapeError(f"dataset width {dataset.input_dim} vs encoder {encoder.input_dim}")
    chunks = [encoder.embed(dataset.inputs[i:i + batch_size])
              for i in range(0, len(dataset), batch_size)]
    return LatentIndex(np.concatenate(chunks), dataset.ids.copy())


def _draw(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.choice(n, size=k, replace=n < k)


# -- sampling strategies ----------------------------------------------------


def sample_snn(F, G, E, pool: Sequence[LabeledSample], dataset, index: LatentIndex, J: int,
               alpha: float, rng: np.random.Generator, kind: LossKind | str,
               labeled_ids=(), oracle=None, round_index: int = 2) -> IncrementalSet:
    """Mine ``J`` real samples by stepping seeds from ``pool`` and snapping to neighbors.

    Seeds whose gradient vanishes fall back to a uniform draw among unlabeled
    entries. Already-labeled ids and ids picked earlier in the batch are never
    returned.
    """
    if not pool:
        raise SamplingError("empty seed pool")
    taken = set(int(i) for i in labeled_ids)
    available = len(index) - int(np.isin(index.ids, list(taken)).sum())
    if available < J:
        raise SamplingError(f"only {available} unlabeled candidates for J={J}")

    seed_pos = _draw(rng, len(pool), J)
    seeds = [pool[i] for i in seed_pos]
    origins = E.embed(np.stack([s.x for s in seeds]))
    grads = latent_loss_grads(F, G, origins, [s.y for s in seeds], kind)

    samples, prov = [], []
    for seed, p, g in zip(seeds, origins, grads):
        d = normalize_gradient(g)
        if d.degenerate:
            free = index.ids[~np.isin(index.ids, list(taken))]
            sid = int(free[rng.integers(len(free))])
            stepped, fallback = None, True
        else:
            stepped = step(p, d, alpha)
            _, sid = nearest_neighbor(stepped, index, taken)
            fallback = False
        taken.add(sid)
        pos = dataset.position(sid)
        x = dataset.inputs[pos].copy()
        y = oracle.label(x, sample_id=sid) if oracle is not None else dataset.label_of(sid)
        samples.append(LabeledSample(x, y, sid))
        prov.append(Provenance("snn", p.copy(), stepped, sid, seed.sample_id, fallback))
    return IncrementalSet(round_index, samples, prov)


def sample_si(F, G, oracle, anchors: AnchorPool, J: int, alpha: float,
              rng: np.random.Generator, kind: LossKind | str, relabel: bool = True,
              round_index: int = 2) -> IncrementalSet:
    """Synthesize ``J`` samples by stepping stored latent anchors and decoding them.

    With ``relabel`` the labeling tool annotates every decoded sample; otherwise
    the anchor's previous label is reused. Stepped points join ``anchors``.
    """
    if len(anchors) == 0:
        raise SamplingError("empty anchor pool")
    picks = _draw(rng, len(anchors), J)
    origins = np.stack([anchors.points[i] for i in picks])
    old_labels = [anchors.labels[i] for i in picks]
    grads = latent_loss_grads(F, G, origins, old_labels, kind)

    moved, fallbacks = [], []
    for z, g in zip(origins, grads):
        d = normalize_gradient(g)
        if d.degenerate:
            moved.append(rng.standard_normal(z.shape))
            fallbacks.append(True)
        else:
            moved.append(step(z, d, alpha))
            fallbacks.append(False)
    moved = np.stack(moved)
    with _frozen(G):
        xs = G(ad.Tensor(moved)).values
    if not np.all(np.isfinite(xs)):
        raise ad.NonFiniteError("sample_si: non-finite generated sample")

    samples, prov = [], []
    for z, z_new, x, y_old, fb in zip(origins, moved, xs, old_labels, fallbacks):
        y = oracle.label(x) if relabel else y_old
        samples.append(LabeledSample(x.copy(), y, None))
        prov.append(Provenance("si", z.copy(), z_new.copy(), None, None, fb))
        anchors.add(z_new, y)
    return IncrementalSet(round_index, samples, prov)


def trace_trajectory(F, G, start, y, alpha: float, steps: int, kind: LossKind | str,
                     index: LatentIndex | None = None) -> list[np.ndarray]:
    """Repeatedly step a single point uphill in loss, without re-selection.

    With an index, each stepped point snaps to its nearest not-yet-visited
    entry. Stops early when the direction degenerates or no entry is left.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    p = np.asarray(start, dtype=np.float64).reshape(-1)
    path = [p.copy()]
    visited: set[int] = set()
    if index is not None:
        # a start that is itself an entry counts as visited
        same = np.all(index.points == p, axis=1)
        visited.update(int(i) for i in index.ids[same])
    for _ in range(steps):
        d = normalize_gradient(latent_loss_grads(F, G, p[None, :], [y], kind)[0])
        if d.degenerate:
            break
        p = step(p, d, alpha)
        if index is not None:
            if len(visited) == len(index):
                break
            p, sid = nearest_neighbor(p, index, visited)
            visited.add(sid)
        path.append(p.copy())
    return path


def classifier_margin(F, G, points, labels) -> np.ndarray:
    """logit[y] - max other logit of ``F(G(p))``; smaller means closer to a boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with _frozen(F, G):
        logits = F(G(ad.Tensor(pts))).values
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    rows = np.arange(len(pts))
    own = logits[rows, labels]
    others = logits.copy()
    others[rows, labels] = -np.inf
    return own - others.max(axis=1)


def write_trajectories(path, trajectories: Sequence[Sequence[np.ndarray]],
                       losses: Sequence[Sequence[float]]) -> None:
    """CSV: trajectory_id, step, c0..c{n-1}, loss."""
    dim = len(trajectories[0][0]) if trajectories and len(trajectories[0]) else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trajectory_id", "step", *[f"c{i}" for i in range(dim)], "loss"])
        for tid, (traj, loss) in enumerate(zip(trajectories, losses)):
            for k, (p, value) in enumerate(zip(traj, loss)):
                writer.writerow([tid, k, *[repr(float(c)) for c in p], repr(float(value))])
