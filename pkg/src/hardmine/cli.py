"""Command-line harness: ``run``, ``summarize``, ``plot-data`` and ``trace``.

Each ``run`` writes into a content-addressed directory ``<out>/<task>-<config hash>``::

    config.txt            config echo (first line carries the hash)
    metrics.csv           one row per (method, seed, round)
    status.json           complete | partial, with any per-seed errors
    checkpoints/*.npz     final run state per (method, seed), used by plot-data
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from hardmine.config import ConfigError, ExperimentConfig, load_config
from hardmine.sampler import point_losses, trace_trajectory, write_trajectories
from hardmine.trainer import MetricRecord, ProgressiveRun, build_task, pretrain_vae, stream


class SummaryError(ValueError):
    pass


# -- run ---------------------------------------------------------------------


def run_dir_for(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / f"{cfg.task}-{cfg.config_hash()}"


def _run_seed(cfg: ExperimentConfig, seed: int, ckpt_dir: str | None):
    """Pretrain the seed's VAE once, then run every method against it."""
    out: dict[str, list[MetricRecord]] = {}
    try:
        task = build_task(cfg)
        vae = pretrain_vae(cfg, seed, task.train)
        for method in cfg.methods:
            run = ProgressiveRun(cfg, seed, method, task, vae)
            out[method] = []
            while not run.done:
                out[method].append(run.next_round())
            if "si" == method and run.oracle.calls != cfg.J * cfg.rounds:
                raise AssertionError(f"si oracle calls {run.oracle.calls} != J*n = {cfg.J * cfg.rounds}")
            if ckpt_dir is not None:
                run.save(Path(ckpt_dir) / f"{method}-s{seed}.npz")
    except Exception:
        return seed, out, traceback.format_exc()
    return seed, out, None


def metrics_text(records: list[MetricRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MetricRecord.FIELDS)
    for rec in records:
        writer.writerow(rec.row())
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, checkpoints: bool = True) -> tuple[Path, bool]:
    """Execute all seeds x methods; returns ``(run_dir, complete)``."""
    rdir = run_dir_for(cfg)
    ckpt = rdir / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    (rdir / "config.txt").write_text(cfg.dumps())
    ckpt_arg = str(ckpt) if checkpoints else None
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), cfg.seeds,
                                    [ckpt_arg] * len(cfg.seeds)))
    else:
        results = [_run_seed(cfg, s, ckpt_arg) for s in cfg.seeds]

    by_seed = {seed: recs for seed, recs, _ in results}
    ordered = [rec for method in cfg.methods for seed in cfg.seeds
               for rec in by_seed[seed].get(method, [])]
    errors = {str(seed): err for seed, _, err in results if err is not None}
    with open(rdir / "metrics.csv", "w", newline="") as fh:
        fh.write(metrics_text(ordered))
    status = {"config_hash": cfg.config_hash(), "status": "partial" if errors else "complete",
              "rows": len(ordered), "errors": errors}
    (rdir / "status.json").write_text(json.dumps(status, indent=2, sort_keys=True) + "\n")
    return rdir, not errors


# -- summarize ----------------------------------------------------------------


def read_metrics(path: str | Path) -> list[MetricRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.csv"
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MetricRecord.FIELDS:
            raise SummaryError(f"{path}: unexpected header {header}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(MetricRecord.FIELDS):
                raise SummaryError(f"{path}:{lineno}: expected {len(MetricRecord.FIELDS)} fields")
            task, method, seed, t, size, metric, value, calls, wall = row
            out.append(MetricRecord(task, method, int(seed), int(t), int(size), metric,
                                    float(value), int(calls), int(wall)))
    return out


def summarize(records: list[MetricRecord]) -> list[dict]:
    """Per (method, round) mean and population std across seeds, with winner flags."""
    if not records:
        raise SummaryError("no records to summarize")
    tasks = {r.task for r in records}
    if len(tasks) > 1:
        raise SummaryError(f"mixed tasks: {', '.join(sorted(tasks))}")
    metrics = {r.metric for r in records}
    if len(metrics) > 1:
        raise SummaryError(f"mixed metrics: {', '.join(sorted(metrics))}")
    (metric,) = metrics

    cells: dict[tuple[str, int], dict[int, MetricRecord]] = {}
    methods: list[str] = []
    for r in records:
        if r.method not in methods:
            methods.append(r.method)
        cell = cells.setdefault((r.method, r.t), {})
        if r.seed in cell:
            raise SummaryError(f"duplicate record for method={r.method} seed={r.seed} t={r.t}")
        cell[r.seed] = r
    rounds = sorted({t for _, t in cells})
    if rounds != list(range(1, rounds[-1] + 1)):
        raise SummaryError(f"missing rounds: have {rounds}")
    for method in methods:
        seeds = None
        for t in rounds:
            if (method, t) not in cells:
                raise SummaryError(f"missing round {t} for method {method}")
            have = set(cells[method, t])
            if seeds is not None and have != seeds:
                raise SummaryError(f"missing round {t} for method {method} seeds {sorted(seeds ^ have)}")
            seeds = have

    rows = []
    for t in rounds:
        stats = {}
        for method in methods:
            vals = np.array([cells[method, t][s].value for s in sorted(cells[method, t])])
            sizes = {cells[method, t][s].pool_size for s in cells[method, t]}
            stats[method] = (float(vals.mean()), float(vals.std()), len(vals), min(sizes))
        best_fn = max if metric == "accuracy" else min
        best = best_fn(m for m, _, _, _ in stats.values())
        for method in methods:
            mean, std, n, size = stats[method]
            rows.append({"task": next(iter(tasks)), "method": method, "t": t, "pool_size": size,
                         "metric": metric, "n_seeds": n, "mean": mean, "std": std,
                         "winner": int(mean == best)})
    return rows


SUMMARY_FIELDS = ("task", "method", "t", "pool_size", "metric", "n_seeds", "mean", "std", "winner")


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_FIELDS)
    for row in rows:
        writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in SUMMARY_FIELDS])
    return buf.getvalue()


def summary_table(rows: list[dict]) -> str:
    """Methods as rows, rounds as columns; ``*`` marks the round winner."""
    rounds = sorted({r["t"] for r in rows})
    methods = list(dict.fromkeys(r["method"] for r in rows))
    scale = 100.0 if rows[0]["metric"] == "accuracy" else 1.0
    fmt = "{:.1f}±{:.1f}" if scale == 100.0 else "{:.4f}±{:.4f}"
    cell = {(r["method"], r["t"]): r for r in rows}
    body = [["t", *[str(t) for t in rounds]]]
    for method in methods:
        line = [method]
        for t in rounds:
            r = cell[method, t]
            line.append(fmt.format(r["mean"] * scale, r["std"] * scale) + ("*" if r["winner"] else ""))
        body.append(line)
    widths = [max(len(line[i]) for line in body) for i in range(len(body[0]))]
    unit = "accuracy (%)" if scale == 100.0 else "mse"
    text = [f"{rows[0]['task']}: {unit}, mean±std over seeds; * = best in round"]
    for k, line in enumerate(body):
        text.append(" | ".join(c.rjust(w) for c, w in zip(line, widths)))
        if k == 0:
            text.append("-+-".join("-" * w for w in widths))
    return "\n".join(text) + "\n"


# -- trajectories / plot data --------------------------------------------------


def run_trajectories(run: ProgressiveRun, n: int, steps: int, seed: int):
    """Trace ``n`` training samples uphill from their embeddings with the run's final model."""
    train = run.task.train
    rng = stream(seed, "trace")
    picks = np.sort(rng.choice(len(train), size=min(n, len(train)), replace=False))
    starts = run.vae.embed(train.inputs[picks])
    labels = [train.labels[i] for i in picks]
    index = run.index if run.method == "snn" else None
    alpha = run._alpha()
    paths, losses = [], []
    for p0, y in zip(starts, labels):
        path = trace_trajectory(run.F, run.vae, p0, y, alpha, steps, run.task.kind, index)
        paths.append(path)
        losses.append(point_losses(run.F, run.vae, np.stack(path), [y] * len(path), run.task.kind))
    return paths, losses


def plot_data(run_dir: str | Path) -> list[Path]:
    rdir = Path(run_dir)
    cfg = load_config(rdir / "config.txt")
    rows = summarize(read_metrics(rdir / "metrics.csv"))
    written = []
    curves = rdir / "curves"
    curves.mkdir(exist_ok=True)
    for method in dict.fromkeys(r["method"] for r in rows):
        path = curves / f"curve_{method}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "pool_size", "mean", "std", "n_seeds"])
            for r in rows:
                if r["method"] == method:
                    writer.writerow([r["t"], r["pool_size"], repr(r["mean"]), repr(r["std"]), r["n_seeds"]])
        written.append(path)
    if cfg.latent_dim != 2:
        print(f"plot-data: latent_dim={cfg.latent_dim}, skipping trajectory output (needs 2)", file=sys.stderr)
        return written
    task = build_task(cfg)
    tdir = rdir / "trajectories"
    tdir.mkdir(exist_ok=True)
    for ckpt in sorted((rdir / "checkpoints").glob("*.npz")):
        run = ProgressiveRun.load(ckpt, task)
        paths, losses = run_trajectories(run, cfg.n_trajectories, cfg.trajectory_steps, run.seed)
        path = tdir / f"traj_{ckpt.stem}.csv"
        write_trajectories(path, paths, losses)
        written.append(path)
    return written


# -- entry point ----------------------------------------------------------------


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.out is not None:
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hardmine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run every seed x method of a config")
    p.add_argument("config")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated override of the config's seeds")
    p.add_argument("--out", help="override out_dir")
    p.add_argument("--jobs", type=int, default=1, help="seeds run in parallel processes")

    p = sub.add_parser("summarize", help="aggregate metrics.csv files per method and round")
    p.add_argument("paths", nargs="+", help="metrics.csv files or run directories")
    p.add_argument("--out", help="directory for summary.csv and summary.txt")

    p = sub.add_parser("plot-data", help="emit curve and trajectory CSVs for a finished run")
    p.add_argument("run_dir")

    p = sub.add_parser("trace", help="train the first seed/method of a config and trace trajectories")
    p.add_argument("config")
    p.add_argument("--seeds", type=_seed_list)
    p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            cfg = _load(args)
            rdir, complete = run_experiment(cfg, jobs=max(1, args.jobs))
            print(rdir)
            if not complete:
                print(f"run incomplete; see {rdir / 'status.json'}", file=sys.stderr)
                return 1
            return 0
        if args.verb == "summarize":
            records = [r for p in args.paths for r in read_metrics(p)]
            rows = summarize(records)
            table = summary_table(rows)
            sys.stdout.write(table)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "summary.csv").write_text(summary_csv(rows))
                (out / "summary.txt").write_text(table)
            return 0
        if args.verb == "plot-data":
            for path in plot_data(args.run_dir):
                print(path)
            return 0
        if args.verb == "trace":
            cfg = _load(args)
            seed, method = cfg.seeds[0], cfg.methods[0]
            task = build_task(cfg)
            run = ProgressiveRun(cfg, seed, method, task, pretrain_vae(cfg, seed, task.train))
            run.run()
            rdir = run_dir_for(cfg)
            rdir.mkdir(parents=True, exist_ok=True)
            (rdir / "config.txt").write_text(cfg.dumps())
            paths, losses = run_trajectories(run, cfg.n_trajectories, cfg.trajectory_steps, seed)
            out = rdir / f"trace_{method}-s{seed}.csv"
            write_trajectories(out, paths, losses)
            print(out)
            return 0
    except (ConfigError, SummaryError, FileNotFoundError) as exc:
        print(f"hardmine: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
