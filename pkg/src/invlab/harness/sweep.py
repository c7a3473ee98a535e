"""Lambda sweeps over repeated cross-validation, with flushing and resume.

Each cell ``(lambda, rep, fold)`` trains a fresh network from a seed that
depends only on the cell position, so results do not depend on execution
order or worker count. ``results.csv`` is rewritten after every finished
cell; wall-clock durations go to ``timings.jsonl`` so that the CSV files
stay byte-reproducible.
"""

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import model, training
from .splits import check_plans, make_splits

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("lambda", "lambda_index", "rep", "fold", "seed", "status",
                  "classifier_accuracy", "adversary_accuracy", "best_epoch", "n_epochs",
                  "error")
SUMMARY_COLUMNS = ("lambda", "n", "classifier_mean", "classifier_std",
                   "adversary_mean", "adversary_std", "classifier_delta", "adversary_delta")


def cell_seed(base_seed, rep, fold, lam_index):
    return base_seed * 10000 + rep * 100 + fold * 10 + lam_index


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


@dataclass
class SweepResult:
    lambdas: list
    rows: list = field(default_factory=list)  # dicts keyed by RESULT_COLUMNS

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r["lambda_index"], r["rep"], r["fold"]))

    def ok_rows(self, lam_index=None):
        return [r for r in self.rows if r["status"] == "ok"
                and (lam_index is None or r["lambda_index"] == lam_index)]

    def summary(self):
        """Per-lambda mean and population std (ddof=0) over successful cells,
        plus deltas of the means relative to lambda index 0."""
        out = []
        for i, lam in enumerate(self.lambdas):
            rows = self.ok_rows(i)
            c = np.array([r["classifier_accuracy"] for r in rows], dtype=float)
            a = np.array([r["adversary_accuracy"] for r in rows], dtype=float)
            out.append({
                "lambda": float(lam), "n": len(rows),
                "classifier_mean": float(np.mean(c)) if len(c) else float("nan"),
                "classifier_std": float(np.std(c)) if len(c) else float("nan"),
                "adversary_mean": float(np.mean(a)) if len(a) else float("nan"),
                "adversary_std": float(np.std(a)) if len(a) else float("nan"),
            })
        for s in out:
            s["classifier_delta"] = s["classifier_mean"] - out[0]["classifier_mean"]
            s["adversary_delta"] = s["adversary_mean"] - out[0]["adversary_mean"]
        return out

    def write_results(self, path):
        _write_csv(path, RESULT_COLUMNS, self.sorted_rows())

    def write_summary(self, path):
        _write_csv(path, SUMMARY_COLUMNS, self.summary())


def _write_csv(path, columns, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r.get(c)) for c in columns])
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


_INT_COLS = ("lambda_index", "rep", "fold", "seed", "best_epoch", "n_epochs")
_FLOAT_COLS = ("lambda", "classifier_accuracy", "adversary_accuracy")


def read_results(path):
    """Rebuild a SweepResult from a results.csv file (or the directory holding it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "results.csv"
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for raw in reader:
            r = dict(raw)
            for c in _INT_COLS:
                r[c] = int(r[c]) if r[c] != "" else None
            for c in _FLOAT_COLS:
                r[c] = float(r[c]) if r[c] != "" else None
            rows.append(r)
    lambdas = {}
    for r in rows:
        lambdas[r["lambda_index"]] = r["lambda"]
    if not lambdas:
        raise ValueError(f"{path}: no result rows")
    if sorted(lambdas) != list(range(len(lambdas))):
        raise ValueError(f"{path}: lambda indices are not contiguous")
    return SweepResult([lambdas[i] for i in range(len(lambdas))], rows)


# -- cell execution ---------------------------------------------------------

_WORKER = {}


def _init_worker(trials, plans, template):
    _WORKER.update(trials=trials, plans=plans, template=template)


def _run_cell(job):
    lam_index, lam, plan_index, seed = job
    trials, template = _WORKER["trials"], _WORKER["template"]
    plan = _WORKER["plans"][plan_index]
    row = {"lambda": float(lam), "lambda_index": lam_index, "rep": plan.rep,
           "fold": plan.fold, "seed": seed, "status": "ok", "classifier_accuracy": None,
           "adversary_accuracy": None, "best_epoch": None, "n_epochs": None, "error": ""}
    t0 = time.perf_counter()
    try:
        config = replace(template, lam=float(lam), seed=seed)
        net = model.build_network(seed=seed)
        ckpt, hist = training.train_adversarial(trials.subset(plan.train),
                                                trials.subset(plan.val), net, config)
        metrics = training.evaluate(ckpt, trials.subset(plan.test))
        row.update(classifier_accuracy=metrics["classifier_accuracy"],
                   adversary_accuracy=metrics["adversary_accuracy"],
                   best_epoch=hist.best_epoch, n_epochs=len(hist.rows))
    except Exception as exc:  # a failed cell is recorded, never fatal
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        log.warning("cell lam=%s rep=%d fold=%d failed: %s", lam, plan.rep, plan.fold, exc)
    return row, time.perf_counter() - t0


def default_workers():
    try:
        return max(1, int(os.environ.get("INVLAB_THREADS", "1")))
    except ValueError:
        raise ValueError("INVLAB_THREADS must be a positive integer") from None


def run_sweep(trials, lambdas, train_config=None, reps=10, folds=5, seed=0,
              out_dir=None, resume=False, workers=None, val_fraction=0.10):
    """Train and evaluate every (lambda, rep, fold) cell.

    With ``out_dir`` set, results.csv is flushed after each cell and a
    ``timings.jsonl`` sidecar receives per-cell durations. ``resume`` keeps
    successful cells found in an existing results.csv and reruns the rest.
    """
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ValueError("lambda list is empty")
    if any(v < 0 for v in lambdas):
        raise ValueError("lambda values must be non-negative")
    template = train_config or training.TrainConfig()
    template.validate()
    plans = make_splits(trials.condition, reps=reps, folds=folds,
                        val_fraction=val_fraction, seed=seed)
    check_plans(plans, trials.condition, folds=folds)
    workers = default_workers() if workers is None else int(workers)

    result = SweepResult(lambdas)
    done = set()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if resume and (out_dir / "results.csv").exists():
            prev = read_results(out_dir)
            for r in prev.rows:
                key = (r["lambda_index"], r["rep"], r["fold"])
                if (r["status"] == "ok" and r["lambda_index"] < len(lambdas)
                        and lambdas[r["lambda_index"]] == r["lambda"]
                        and r["seed"] == cell_seed(seed, *key[1:], key[0])):
                    result.rows.append(r)
                    done.add(key)

    jobs = []
    for li, lam in enumerate(lambdas):
        for pi, plan in enumerate(plans):
            if (li, plan.rep, plan.fold) not in done:
                jobs.append((li, lam, pi, cell_seed(seed, plan.rep, plan.fold, li)))

    def record(row, seconds):
        result.rows.append(row)
        if out_dir is not None:
            result.write_results(out_dir / "results.csv")
            with open(out_dir / "timings.jsonl", "a") as fh:
                fh.write(json.dumps({"lambda": row["lambda"], "rep": row["rep"],
                                     "fold": row["fold"], "status": row["status"],
                                     "seconds": round(seconds, 3),
                                     "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}) + "\n")
        log.info("lam=%g rep=%d fold=%d %s clf=%s adv=%s (%.1fs)", row["lambda"], row["rep"],
                 row["fold"], row["status"], row["classifier_accuracy"],
                 row["adversary_accuracy"], seconds)

    if workers <= 1:
        _init_worker(trials, plans, template)
        try:
            for job in jobs:
                record(*_run_cell(job))
        finally:
            _WORKER.clear()
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(trials, plans, template)) as pool:
            for row, seconds in pool.map(_run_cell, jobs):
                record(row, seconds)

    result.rows = result.sorted_rows()
    if out_dir is not None:
        result.write_results(out_dir / "results.csv")
        result.write_summary(out_dir / "summary.csv")
    return result
