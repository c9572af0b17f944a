"""Multi-seed runs, per-seed CSV logs, summaries and the two protocols."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import Dataset, corrupt_labels, gen_blobs, gen_circles, gen_two_moons, load_csv, split_semi_supervised
from ..trainer import RunHistory, train
from .config import ExperimentConfig

CSV_HEADER = (
    "epoch", "pair", "supervised_loss", "consistency_loss", "kept_fraction", "mean_temperature",
    "student_train_acc", "student_test_acc", "teacher_train_acc", "teacher_test_acc",
)
# the headline number: final-epoch EMA teacher test accuracy, averaged over pairs
HEADLINE = "teacher_test_acc"


def derive_seed(master: int, index: int, purpose: str = "run") -> int:
    """Stable 63-bit seed from (master, index); independent of Python's hash salt."""
    digest = hashlib.blake2b(f"{purpose}:{master}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def atomic_write(path: str | Path, text: str) -> None:
    """Write to a temp file in the same directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_dataset(cfg: ExperimentConfig, run_seed: int) -> Dataset:
    """Generate (or load), split and optionally corrupt the data for one run."""
    data_seed = derive_seed(run_seed, 0, "data")
    if cfg.dataset == "two_moons":
        ds = gen_two_moons(cfg.n_train, cfg.data_noise, seed=data_seed, n_test=cfg.n_test)
    elif cfg.dataset == "blobs":
        ds = gen_blobs(cfg.n_train, cfg.n_classes, cfg.spread, seed=data_seed, n_test=cfg.n_test)
    elif cfg.dataset == "circles":
        ds = gen_circles(cfg.n_train, cfg.data_noise, seed=data_seed, n_test=cfg.n_test, factor=cfg.circle_factor)
    else:
        ds = _load_csv_pair(cfg)
    # a CSV that already marks unlabeled rows defines its own split
    if cfg.dataset != "csv" or ds.labeled[ds.train_idx].all():
        ds = split_semi_supervised(ds, cfg.n_labeled, seed=derive_seed(run_seed, 0, "split"))
    if cfg.corruption > 0:
        ds = corrupt_labels(ds, cfg.corruption, seed=derive_seed(run_seed, 0, "corrupt"))
    return ds


def _load_csv_pair(cfg: ExperimentConfig) -> Dataset:
    tr, te = load_csv(cfg.train_csv), load_csv(cfg.test_csv)
    if tr.n_features != te.n_features:
        raise ValueError("train_csv and test_csv have different feature counts")
    if np.any(te.labels < 0):
        raise ValueError("test_csv: every test row needs a label")
    n_classes = max(tr.n_classes, te.n_classes)
    n_tr = tr.features.shape[0]
    return Dataset(
        features=np.vstack([tr.features, te.features]),
        labels=np.concatenate([tr.labels, te.labels]),
        labeled=np.concatenate([tr.labeled, np.zeros(te.features.shape[0], bool)]),
        train_idx=np.arange(n_tr), test_idx=np.arange(n_tr, n_tr + te.features.shape[0]),
        n_classes=n_classes,
    )


def history_rows(history: RunHistory) -> list[dict]:
    rows = []
    for rec in history.records:
        for i, p in enumerate(rec.pairs):
            rows.append(dict(
                epoch=rec.epoch, pair=i, supervised_loss=p.supervised_loss,
                consistency_loss=p.consistency_loss, kept_fraction=p.kept_fraction,
                mean_temperature=p.mean_temperature, student_train_acc=p.student_train_acc,
                student_test_acc=p.student_test_acc, teacher_train_acc=p.teacher_train_acc,
                teacher_test_acc=p.teacher_test_acc,
            ))
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r[k] if isinstance(r[k], (int, np.integer)) else format(r[k], ".17g") for k in CSV_HEADER])
    return buf.getvalue()


def read_run_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: (int(v) if k in ("epoch", "pair") else float(v)) for k, v in r.items()} for r in reader]


def final_metrics(rows: list[dict]) -> dict[str, float]:
    """Final-epoch accuracies averaged over pairs."""
    if not rows:
        return {}
    last = max(r["epoch"] for r in rows)
    final = [r for r in rows if r["epoch"] == last]
    keys = ("student_test_acc", "teacher_test_acc", "student_train_acc", "teacher_train_acc")
    return {k: float(np.mean([r[k] for r in final])) for k in keys}


@dataclass
class SeedResult:
    index: int
    run_seed: int
    metrics: dict[str, float]
    rows: list[dict]


def _run_one(cfg: ExperimentConfig, index: int) -> SeedResult:
    run_seed = derive_seed(cfg.seed, index)
    ds = build_dataset(cfg, run_seed)
    history = train(cfg.trainer_config(run_seed), ds)
    rows = history_rows(history)
    return SeedResult(index, run_seed, final_metrics(rows), rows)


def aggregate(per_seed: list[dict[str, float]]) -> dict[str, dict[str, float]]:
    """Mean and population std (ddof=0) over seeds for every metric."""
    if not per_seed:
        return {}
    out = {}
    for key in per_seed[0]:
        vals = np.array([m[key] for m in per_seed], dtype=float)
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> dict:
    """Train ``cfg.n_seeds`` runs, write ``run_<seed>.csv`` and ``summary.json``.

    Seeds are derived from ``(cfg.seed, index)`` so the result does not depend
    on the number of workers.
    """
    cfg.validate()
    out = Path(out if out is not None else cfg.out)
    indices = list(range(cfg.n_seeds))
    if cfg.workers > 1 and cfg.n_seeds > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.n_seeds)) as pool:
            results = list(pool.map(_run_one, [cfg] * len(indices), indices))
    else:
        results = [_run_one(cfg, i) for i in indices]
    for r in results:
        atomic_write(out / f"run_{r.index}.csv", rows_to_csv(r.rows))
    summary = {
        "config": cfg.to_dict(),
        "headline": HEADLINE,
        "seeds": [{"index": r.index, "run_seed": r.run_seed, **r.metrics} for r in results],
        "aggregate": aggregate([r.metrics for r in results]),
    }
    atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def headline(summary: dict) -> tuple[float, float]:
    agg = summary["aggregate"].get(HEADLINE)
    if agg is None:
        return float("nan"), float("nan")
    return agg["mean"], agg["std"]


def _table(rows: list[dict], columns: tuple[str, ...]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format(r[c], ".17g") if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


REPORT_COLUMNS = ("setting", "value", "method", "mean", "std", "n_seeds")


def _grid(cfg: ExperimentConfig, out: Path, setting: str, values: list, methods: list[str]) -> list[dict]:
    rows = []
    for v in values:
        for m in methods:
            sub = cfg.replace(method=m, **{setting: v})
            summary = run_experiment(sub, out / f"{setting}_{v}" / m)
            mean, std = headline(summary)
            rows.append({"setting": setting, "value": v, "method": m, "mean": mean, "std": std,
                         "n_seeds": sub.n_seeds})
    return rows


def run_noisy_protocol(cfg: ExperimentConfig, out: str | Path | None = None) -> list[dict]:
    """One row per (corruption fraction, method); written to ``noisy_report.csv``."""
    out = Path(out if out is not None else cfg.out)
    rows = _grid(cfg, out, "corruption", cfg.fraction_list, cfg.method_list)
    atomic_write(out / "noisy_report.csv", _table(rows, REPORT_COLUMNS))
    return rows


def run_sweep(cfg: ExperimentConfig, out: str | Path | None = None) -> list[dict]:
    """One row per (label budget, method); written to ``sweep_report.csv``."""
    out = Path(out if out is not None else cfg.out)
    rows = _grid(cfg, out, "n_labeled", cfg.budget_list, cfg.method_list)
    atomic_write(out / "sweep_report.csv", _table(rows, REPORT_COLUMNS))
    return rows
