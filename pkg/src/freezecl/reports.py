"""CSV reports built from completed run directories.

Files written under the report directory:

- ``table.csv``: one row per strategy, final-checkpoint balanced accuracy per
  task (mean over seeds) and the plain mean of those columns.
- ``table_by_seed.csv``: the same, one row per (strategy, seed).
- ``forgetting.csv``: ``strategy,seed,stage,task,auc,bal_acc,threshold``.
- ``roc/<strategy>-seed<n>-stage<k>.csv``: union ROC points ``fpr,tpr,threshold``.
- ``summary.csv``: per-strategy averages of balanced accuracy, union AUC and
  the drop in task-0 AUC between its first and last checkpoint.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import load_task_dir
from .errors import ReportError
from .metrics import ForgettingMatrix, forgetting_analysis
from .strategies import ALL_STRATEGIES, load_run, read_manifest


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _writer(path: Path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def analyse_run_dir(run_dir: Path) -> tuple[str, int, ForgettingMatrix]:
    man = read_manifest(run_dir)
    run = load_run(run_dir)
    if not run.complete:
        missing = list(range(len(run.checkpoints), run.n_stages))
        raise ReportError(f"{run_dir}: incomplete run, missing stages {missing}")
    data_dir = man.get("meta", {}).get("data_dir")
    if data_dir is None:
        raise ReportError(f"{run_dir}: manifest does not record its data directory")
    tasks = load_task_dir(run_dir / data_dir)
    return run.strategy.value, run.seed, forgetting_analysis(run, tasks)


def write_reports(run_dirs: Sequence[str | Path], out_dir: str | Path) -> dict[str, list[float]]:
    """Write every report file and return ``{strategy: [avg bal acc per seed]}``."""
    out_dir = Path(out_dir)
    (out_dir / "roc").mkdir(parents=True, exist_ok=True)
    order = {s.value: i for i, s in enumerate(ALL_STRATEGIES)}
    results = sorted((analyse_run_dir(Path(d)) for d in run_dirs),
                     key=lambda r: (order.get(r[0], len(order)), r[0], r[1]))
    if not results:
        raise ReportError("no run directories to report on")
    task_ids = results[0][2].task_ids
    for strategy, seed, fm in results:
        if fm.task_ids != task_ids:
            raise ReportError(f"{strategy} seed {seed}: task ids {fm.task_ids} differ from {task_ids}")

    per_strategy: dict[str, list[ForgettingMatrix]] = {}
    fh, w = _writer(out_dir / "table_by_seed.csv")
    with fh:
        w.writerow(["strategy", "seed", *task_ids, "avg"])
        for strategy, seed, fm in results:
            per_strategy.setdefault(strategy, []).append(fm)
            final = fm.bal_acc[-1]
            w.writerow([strategy, seed, *map(_fmt, final), _fmt(float(np.mean(final)))])

    fh, w = _writer(out_dir / "table.csv")
    with fh:
        w.writerow(["strategy", *task_ids, "avg"])
        for strategy, fms in per_strategy.items():
            cols = np.mean([fm.bal_acc[-1] for fm in fms], axis=0)
            w.writerow([strategy, *map(_fmt, cols), _fmt(float(np.mean(cols)))])

    fh, w = _writer(out_dir / "forgetting.csv")
    with fh:
        w.writerow(["strategy", "seed", "stage", "task", "auc", "bal_acc", "threshold"])
        for strategy, seed, fm in results:
            for k, rep in enumerate(fm.reports):
                for j, tid in enumerate(task_ids):
                    w.writerow([strategy, seed, k, tid, _fmt(fm.auc[k, j]), _fmt(fm.bal_acc[k, j]),
                                repr(rep.threshold)])

    for strategy, seed, fm in results:
        for k, rep in enumerate(fm.reports):
            fh, w = _writer(out_dir / "roc" / f"{strategy}-seed{seed}-stage{k}.csv")
            with fh:
                w.writerow(["fpr", "tpr", "threshold"])
                for f, t, th in rep.union_roc.points():
                    w.writerow([repr(f), repr(t), repr(th)])

    averages = {}
    fh, w = _writer(out_dir / "summary.csv")
    with fh:
        w.writerow(["strategy", "n_seeds", "avg_bal_acc", "union_auc", "task0_auc_drop"])
        for strategy, fms in per_strategy.items():
            avg = [float(np.mean(fm.bal_acc[-1])) for fm in fms]
            averages[strategy] = avg
            w.writerow([strategy, len(fms), _fmt(float(np.mean(avg))),
                        _fmt(float(np.mean([fm.reports[-1].union_auc for fm in fms]))),
                        _fmt(float(np.mean([fm.drop(0) for fm in fms])))])
    return averages


def relpath(target: Path, start: Path) -> str:
    return os.path.relpath(Path(target).resolve(), Path(start).resolve())
