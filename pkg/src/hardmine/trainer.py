"""Round-based progressive training: grow the labeled pool, retrain, evaluate."""

from __future__ import annotations

import json
import math
import os
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hardmine import autodiff as ad
from hardmine.config import DATA_ENV, ExperimentConfig
from hardmine.data import Dataset, gen_blobs, gen_disks, gen_moons, load_idx, split
from hardmine.models import LossKind, TargetModel, VaeModel, task_loss, train_vae
from hardmine.optim import Adam
from hardmine.oracle import (AnalyticClassOracle, AnalyticMapOracle, DatasetLookupOracle, Oracle,
                             nearest_center_rule)
from hardmine.sampler import (AnchorPool, IncrementalSet, LabeledSample, Provenance, embed_dataset,
                              sample_si, sample_snn)

STATE_VERSION = 1
STREAMS = ("vae", "model", "init", "sampler", "training")


def stream(seed: int, name: str) -> np.random.Generator:
    """Named child stream of a root seed; independent of the method being run."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(name.encode()),)))


@dataclass
class MetricRecord:
    task: str
    method: str
    seed: int
    t: int
    pool_size: int
    metric: str
    value: float
    oracle_calls: int
    wall_ms: int = 0

    FIELDS = ("task", "method", "seed", "t", "pool_size", "metric", "value", "oracle_calls", "wall_ms")

    def row(self) -> list[str]:
        return [self.task, self.method, str(self.seed), str(self.t), str(self.pool_size),
                self.metric, repr(float(self.value)), str(self.oracle_calls), str(self.wall_ms)]


@dataclass
class RoundSchedule:
    J: int
    rounds: int
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3

    def __post_init__(self):
        if min(self.J, self.rounds, self.batch_size) < 1 or self.epochs < 0 or self.lr <= 0:
            raise ValueError(f"invalid schedule {self}")

    @property
    def budget(self) -> int:
        return self.J * self.rounds


@dataclass
class TrainPool:
    rounds: list[IncrementalSet] = field(default_factory=list)

    def add(self, inc: IncrementalSet) -> None:
        new_ids = inc.ids
        if len(set(new_ids)) != len(new_ids) or self.labeled_ids & set(new_ids):
            raise ValueError(f"round {inc.round} repeats an already-labeled sample id")
        self.rounds.append(inc)

    @property
    def samples(self) -> list[LabeledSample]:
        return [s for inc in self.rounds for s in inc.samples]

    @property
    def labeled_ids(self) -> set[int]:
        return {s.sample_id for inc in self.rounds for s in inc.samples if s.sample_id is not None}

    def __len__(self) -> int:
        return sum(len(inc) for inc in self.rounds)

    def arrays(self, kind: LossKind) -> tuple[np.ndarray, np.ndarray]:
        samples = self.samples
        x = np.stack([s.x for s in samples])
        if kind is LossKind.CROSS_ENTROPY:
            y = np.array([s.y for s in samples], dtype=np.int64)
        else:
            y = np.stack([np.asarray(s.y, dtype=np.float64) for s in samples])
        return x, y


def init_round_random(dataset: Dataset, J: int, rng: np.random.Generator,
                      oracle: Oracle | None = None) -> IncrementalSet:
    if J > len(dataset):
        raise ValueError(f"cannot draw J={J} samples from a dataset of {len(dataset)}")
    picks = rng.choice(len(dataset), size=J, replace=False)
    samples, prov = [], []
    for pos in picks:
        sid = int(dataset.ids[pos])
        x = dataset.inputs[pos].copy()
        y = oracle.label(x, sample_id=sid) if oracle is not None else dataset.label_of(sid)
        samples.append(LabeledSample(x, y, sid))
        prov.append(Provenance("random", source_id=sid))
    return IncrementalSet(1, samples, prov)


def sample_random(dataset: Dataset, J: int, rng: np.random.Generator, exclude: set[int],
                  oracle: Oracle | None = None, round_index: int = 2) -> IncrementalSet:
    """Uniform draw of ``J`` not-yet-labeled samples (the baseline's incremental set)."""
    free = np.flatnonzero(~np.isin(dataset.ids, list(exclude)))
    if len(free) < J:
        raise ValueError(f"dataset exhausted: {len(free)} unlabeled samples for J={J}")
    inc = init_round_random(dataset.subset(free), J, rng, oracle)
    for p in inc.provenance:
        p.method = "random"
    inc.round = round_index
    return inc


def init_round_gaussian(G, oracle: Oracle, J: int, n: int,
                        rng: np.random.Generator) -> tuple[IncrementalSet, AnchorPool]:
    z = rng.standard_normal((J, n))
    with G.frozen():
        xs = G(ad.Tensor(z)).values
    anchors = AnchorPool()
    samples, prov = [], []
    for zk, x in zip(z, xs):
        y = oracle.label(x)
        samples.append(LabeledSample(x.copy(), y, None))
        prov.append(Provenance("si", origin=zk.copy()))
        anchors.add(zk, y)
    return IncrementalSet(1, samples, prov), anchors


def train_round(F: TargetModel, pool: TrainPool, schedule: RoundSchedule, optimizer: Adam,
                rng: np.random.Generator) -> list[float]:
    """``epochs * ceil(|pool| / batch)`` Adam steps on shuffled mini-batches."""
    if len(pool) == 0:
        raise ValueError("cannot train on an empty pool")
    kind = F.loss_kind
    x, y = pool.arrays(kind)
    n = len(x)
    history = []
    params = F.parameters()
    for _ in range(schedule.epochs):
        order = rng.permutation(n)
        for start in range(0, n, schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            loss = task_loss(kind, F(x[idx]), y[idx])
            optimizer.step(ad.grad(loss, params))
            history.append(loss.item())
    return history


def evaluate(F: TargetModel, test: Dataset) -> tuple[str, float]:
    pred = F.predict(test.inputs)
    if F.head == "classifier":
        return "accuracy", float(np.mean(np.argmax(pred, axis=1) == test.labels))
    return "mse", float(np.mean((pred - test.labels) ** 2))


# -- task construction ------------------------------------------------------


@dataclass
class Task:
    train: Dataset
    test: Dataset
    kind: LossKind
    output_dim: int
    analytic_oracle: Oracle | None = None

    def make_oracle(self, oracle_kind: str) -> Oracle:
        if oracle_kind == "dataset_lookup":
            return DatasetLookupOracle(self.train)
        if oracle_kind == "analytic_map":
            return AnalyticMapOracle(self.train.map_shape, self.train.meta.get("threshold", 0.5))
        if oracle_kind == "analytic_class":
            if self.analytic_oracle is None:
                raise ValueError("task has no analytic class rule")
            return AnalyticClassOracle(self.analytic_oracle.rule, self.train.input_dim)
        raise ValueError(f"unknown oracle {oracle_kind!r}")


def build_task(cfg: ExperimentConfig) -> Task:
    total = cfg.n_train + cfg.n_test
    frac = cfg.n_test / total
    rule = None
    if cfg.task == "blobs_classify":
        per_class = math.ceil(total / cfg.n_classes)
        ds = gen_blobs(per_class, cfg.n_classes, sigma=cfg.sigma, seed=cfg.data_seed,
                       n_features=cfg.n_features, center_spread=cfg.center_spread)
        if len(ds) != total:
            ds = ds.subset(np.arange(total))
            ds = Dataset(ds.inputs, ds.labels, np.arange(total), ds.name, ds.n_classes, meta=ds.meta)
        # class rule on the scaled inputs: nearest class mean
        means = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(cfg.n_classes)])
        rule = AnalyticClassOracle(nearest_center_rule(means), ds.input_dim)
    elif cfg.task == "moons_classify":
        ds = gen_moons(total, cfg.noise, cfg.data_seed)
    elif cfg.task == "disks_map":
        ds = gen_disks(total, cfg.image_size, cfg.image_size, (cfg.radius_min, cfg.radius_max),
                       cfg.data_seed, cfg.threshold)
    else:
        root = Path(cfg.mnist_dir or os.environ.get(DATA_ENV, ""))
        full = load_idx(_idx_path(root, "train-images-idx3-ubyte"), _idx_path(root, "train-labels-idx1-ubyte"))
        pick = np.random.default_rng(cfg.data_seed).choice(len(full), size=total, replace=False)
        sub = full.subset(np.sort(pick))
        ds = Dataset(sub.inputs, sub.labels, np.arange(total), "mnist", 10, meta=sub.meta)
    train, test = split(ds, frac, seed=cfg.data_seed)
    if cfg.is_classification:
        return Task(train, test, LossKind.CROSS_ENTROPY, ds.n_classes, rule)
    return Task(train, test, LossKind.MSE, train.labels.shape[1])


def _idx_path(root: Path, stem: str) -> Path:
    plain = root / stem
    gz = root / (stem + ".gz")
    return gz if not plain.exists() and gz.exists() else plain


def pretrain_vae(cfg: ExperimentConfig, seed: int, train: Dataset) -> VaeModel:
    """Fit the generator on unlabeled training inputs only."""
    rng = stream(seed, "vae")
    vae = VaeModel(train.input_dim, cfg.latent_dim, cfg.vae_hidden, rng=rng)
    train_vae(vae, train.inputs, cfg.vae_steps, cfg.vae_batch_size, cfg.vae_lr, rng, cfg.vae_kl_weight)
    return vae


# -- one (seed, method) run -------------------------------------------------


class ProgressiveRun:
    """State of one progressive-training run; advance with :meth:`next_round`."""

    def __init__(self, cfg: ExperimentConfig, seed: int, method: str, task: Task, vae: VaeModel):
        self.cfg = cfg
        self.seed = seed
        self.method = method
        self.task = task
        self.vae = vae
        self.schedule = RoundSchedule(cfg.J, cfg.rounds, cfg.epochs, cfg.batch_size, cfg.lr)
        self.rngs = {name: stream(seed, name) for name in STREAMS if name != "vae"}
        self.F = self._new_target()
        self.opt = Adam(self.F.parameters(), lr=cfg.lr)
        self.pool = TrainPool()
        self.anchors = AnchorPool()
        self.oracle = task.make_oracle("dataset_lookup" if method == "random" else cfg.oracle)
        self.records: list[MetricRecord] = []
        self.t = 0
        self._index = None

    def _new_target(self) -> TargetModel:
        head = "classifier" if self.task.kind is LossKind.CROSS_ENTROPY else "dense"
        return TargetModel(self.task.train.input_dim, self.cfg.hidden, self.task.output_dim, head,
                           rng=self.rngs["model"])

    @property
    def index(self):
        if self._index is None:
            self._index = embed_dataset(self.vae, self.task.train)
        return self._index

    @property
    def done(self) -> bool:
        return self.t >= self.cfg.rounds

    def _alpha(self) -> float:
        if self.method == "snn":
            return self.cfg.alpha * self.index.rms_pairwise_distance()
        return self.cfg.alpha

    def next_round(self) -> MetricRecord:
        if self.done:
            raise RuntimeError("run already finished")
        started = time.perf_counter()
        self.t += 1
        if self.t == 1:
            inc = self._init_round()
        else:
            inc = self._mine_round()
        self.pool.add(inc)
        self._check_invariants()
        if self.cfg.reinit_per_round and self.t > 1:
            self.F = self._new_target()
            self.opt = Adam(self.F.parameters(), lr=self.cfg.lr)
        train_round(self.F, self.pool, self.schedule, self.opt, self.rngs["training"])
        metric, value = evaluate(self.F, self.task.test)
        wall = int(round((time.perf_counter() - started) * 1000)) if self.cfg.timing else 0
        rec = MetricRecord(self.cfg.task, self.method, self.seed, self.t, len(self.pool), metric,
                           value, self.oracle.calls, wall)
        self.records.append(rec)
        return rec

    def _init_round(self) -> IncrementalSet:
        if self.method == "si":
            inc, self.anchors = init_round_gaussian(self.vae, self.oracle, self.cfg.J,
                                                    self.cfg.latent_dim, self.rngs["init"])
            return inc
        return init_round_random(self.task.train, self.cfg.J, self.rngs["init"], self.oracle)

    def _mine_round(self) -> IncrementalSet:
        rng = self.rngs["sampler"]
        if self.method == "random":
            return sample_random(self.task.train, self.cfg.J, rng, self.pool.labeled_ids,
                                 self.oracle, self.t)
        if self.method == "snn":
            return sample_snn(self.F, self.vae, self.vae, self.pool.samples, self.task.train,
                              self.index, self.cfg.J, self._alpha(), rng, self.task.kind,
                              self.pool.labeled_ids, self.oracle, self.t)
        return sample_si(self.F, self.vae, self.oracle, self.anchors, self.cfg.J, self._alpha(), rng,
                         self.task.kind, self.cfg.relabel_si, self.t)

    def _check_invariants(self) -> None:
        if len(self.pool) != self.cfg.J * self.t:
            raise AssertionError(f"pool size {len(self.pool)} != J*t = {self.cfg.J * self.t}")
        if not self.pool.labeled_ids.isdisjoint(self.task.test.ids.tolist()):
            raise AssertionError("test samples leaked into the training pool")

    def run(self) -> list[MetricRecord]:
        while not self.done:
            self.next_round()
        return self.records

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        samples = self.pool.samples
        prov = [p for inc in self.pool.rounds for p in inc.provenance]
        n = self.cfg.latent_dim

        def vec(v):
            return np.full(n, np.nan) if v is None else np.asarray(v, dtype=np.float64)

        meta = {
            "version": STATE_VERSION,
            "config": self.cfg.to_dict(),
            "seed": self.seed,
            "method": self.method,
            "t": self.t,
            "round_sizes": [len(inc) for inc in self.pool.rounds],
            "prov": [[p.method, p.source_id, p.seed_id, p.fallback] for p in prov],
            "rng": {name: g.bit_generator.state for name, g in self.rngs.items()},
            "opt": {k: v for k, v in self.opt.state_dict().items() if k not in ("m", "v")},
            "oracle_calls": self.oracle.calls,
            "records": [r.row() for r in self.records],
            "n_anchors": len(self.anchors),
        }
        arrays = {
            "pool_x": np.stack([s.x for s in samples]) if samples else np.zeros((0, 0)),
            "pool_y": (np.array([s.y for s in samples]) if samples else np.zeros(0)),
            "pool_id": np.array([-1 if s.sample_id is None else s.sample_id for s in samples], dtype=np.int64),
            "prov_origin": np.stack([vec(p.origin) for p in prov]) if prov else np.zeros((0, n)),
            "prov_stepped": np.stack([vec(p.stepped) for p in prov]) if prov else np.zeros((0, n)),
            "anchor_z": np.stack(self.anchors.points) if len(self.anchors) else np.zeros((0, n)),
            "anchor_y": np.array(self.anchors.labels) if len(self.anchors) else np.zeros(0),
        }
        for i, a in enumerate(self.F.get_arrays()):
            arrays[f"target_{i:03d}"] = a
        for i, a in enumerate(self.opt.m):
            arrays[f"adam_m_{i:03d}"] = a
        for i, a in enumerate(self.opt.v):
            arrays[f"adam_v_{i:03d}"] = a
        for i, a in enumerate(self.vae.get_arrays()):
            arrays[f"vae_{i:03d}"] = a
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path: str | Path, task: Task | None = None) -> "ProgressiveRun":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != STATE_VERSION:
                raise ValueError(f"unsupported run-state version {meta.get('version')}")
            arrays = {k: data[k] for k in data.files if k != "meta"}
        cfg = ExperimentConfig(**meta["config"]).validate()
        task = task if task is not None else build_task(cfg)
        vae = VaeModel(task.train.input_dim, cfg.latent_dim, cfg.vae_hidden, zero=True)
        vae.set_arrays(_numbered(arrays, "vae_"))
        run = cls(cfg, meta["seed"], meta["method"], task, vae)
        run.F.set_arrays(_numbered(arrays, "target_"))
        run.opt = Adam(run.F.parameters())
        run.opt.load_state_dict({**meta["opt"], "m": _numbered(arrays, "adam_m_"),
                                 "v": _numbered(arrays, "adam_v_")})
        for name, state in meta["rng"].items():
            run.rngs[name].bit_generator.state = state
        run.t = meta["t"]
        run.oracle.calls = meta["oracle_calls"]
        run.records = [_record_from_row(r) for r in meta["records"]]

        classify = task.kind is LossKind.CROSS_ENTROPY
        k = 0
        for t, size in enumerate(meta["round_sizes"], start=1):
            samples, prov = [], []
            for _ in range(size):
                sid = int(arrays["pool_id"][k])
                y = arrays["pool_y"][k]
                samples.append(LabeledSample(arrays["pool_x"][k].copy(),
                                             int(y) if classify else y.copy(),
                                             None if sid < 0 else sid))
                method, source, seed_id, fallback = meta["prov"][k]
                origin, stepped = arrays["prov_origin"][k], arrays["prov_stepped"][k]
                prov.append(Provenance(method, None if np.isnan(origin).all() else origin.copy(),
                                       None if np.isnan(stepped).all() else stepped.copy(),
                                       source, seed_id, fallback))
                k += 1
            run.pool.rounds.append(IncrementalSet(t, samples, prov))
        for z, y in zip(arrays["anchor_z"], arrays["anchor_y"]):
            run.anchors.add(z, int(y) if classify else y.copy())
        return run


def _numbered(arrays: dict, prefix: str) -> list[np.ndarray]:
    return [arrays[k] for k in sorted(k for k in arrays if k.startswith(prefix))]


def _record_from_row(row: list[str]) -> MetricRecord:
    task, method, seed, t, size, metric, value, calls, wall = row
    return MetricRecord(task, method, int(seed), int(t), int(size), metric, float(value), int(calls), int(wall))


def run(cfg: ExperimentConfig, seed: int | None = None, method: str | None = None,
        task: Task | None = None, vae: VaeModel | None = None) -> list[MetricRecord]:
    """Execute one progressive run and return one record per round."""
    seed = cfg.seeds[0] if seed is None else seed
    method = cfg.methods[0] if method is None else method
    task = task if task is not None else build_task(cfg)
    vae = vae if vae is not None else pretrain_vae(cfg, seed, task.train)
    return ProgressiveRun(cfg, seed, method, task, vae).run()
