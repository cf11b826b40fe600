"""The five training strategies and the sequential multi-task protocol.

A run directory holds ``manifest.json`` plus one ``stage{k}.ckpt`` and
``stage{k}_history.csv`` per completed stage. The manifest is rewritten
atomically after every stage, so an interrupted run resumes from the last
completed stage and reproduces the uninterrupted result exactly.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataio import TaskDataset
from .errors import ConfigError
from .netmodel import (ModelSpec, SplitModel, init_model, load_checkpoint, param_partition,
                       save_checkpoint, snapshot)
from .trainer import Hyper, TrainHistory, train_task


class Strategy(str, enum.Enum):
    TRAIN_ON_ALL = "TrainOnAll"
    FINE_TUNE = "FineTune"
    CL_ALL = "ClAll"
    CL_ENCODER = "ClEncoder"
    CL_CLASSIFIER = "ClClassifier"

    @property
    def sequential(self) -> bool:
        return self is not Strategy.TRAIN_ON_ALL

    @property
    def uses_teacher(self) -> bool:
        return self in (Strategy.CL_ALL, Strategy.CL_ENCODER, Strategy.CL_CLASSIFIER)

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown strategy {value!r}; expected one of {[s.value for s in cls]}") from None


ALL_STRATEGIES = tuple(Strategy)
TEACHER_POLICIES = ("rolling", "anchor")


def freeze_mask_for(strategy: Strategy, model: SplitModel) -> set[str]:
    encoder, classifier = param_partition(model)
    if strategy is Strategy.CL_ENCODER:
        return set(classifier)
    if strategy is Strategy.CL_CLASSIFIER:
        return set(encoder)
    return set()


def stage_seed(seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([seed, 0x57A, stage]).generate_state(1)[0])


@dataclass
class SequenceRun:
    strategy: Strategy
    task_ids: list[str]
    seed: int
    checkpoints: list[SplitModel] = field(default_factory=list)
    histories: list[TrainHistory] = field(default_factory=list)
    teacher: str = "rolling"

    @property
    def n_stages(self) -> int:
        return 1 if self.strategy is Strategy.TRAIN_ON_ALL else len(self.task_ids)

    @property
    def complete(self) -> bool:
        return len(self.checkpoints) == self.n_stages


def _manifest(strategy: Strategy, tasks: Sequence[TaskDataset], spec: ModelSpec, hyper: Hyper,
              seed: int, teacher: str, meta: dict | None) -> dict:
    return {
        "meta": meta or {},
        "strategy": strategy.value,
        "task_ids": [t.task_id for t in tasks],
        "seed": seed,
        "teacher": teacher,
        "spec": spec.to_dict(),
        "hyper": hyper.to_dict(),
        "stage_seeds": [stage_seed(seed, k) for k in range(1 if not strategy.sequential else len(tasks))],
        "completed": [],
    }


def _write_json(path: Path, obj: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{run_dir}: no manifest.json")
    return json.loads(path.read_text())


def load_run(run_dir: str | Path) -> SequenceRun:
    run_dir = Path(run_dir)
    man = read_manifest(run_dir)
    run = SequenceRun(Strategy.parse(man["strategy"]), list(man["task_ids"]), int(man["seed"]),
                      teacher=man["teacher"])
    for entry in man["completed"]:
        run.checkpoints.append(load_checkpoint(run_dir / entry["checkpoint"]))
        run.histories.append(TrainHistory.from_csv(run_dir / entry["history"]))
    return run


def run_sequence(strategy: Strategy | str, tasks: Sequence[TaskDataset], spec: ModelSpec, hyper: Hyper,
                 seed: int, teacher: str = "rolling", run_dir: str | Path | None = None,
                 on_stage: Callable[[int, SequenceRun], None] | None = None,
                 meta: dict | None = None) -> SequenceRun:
    """Train ``spec`` on ``tasks`` under one strategy.

    With ``run_dir``, each finished stage is persisted and stages already
    recorded in an existing manifest are loaded instead of retrained.
    ``meta`` is stored verbatim in the manifest.
    """
    strategy = Strategy.parse(strategy)
    if not tasks:
        raise ConfigError("run_sequence needs at least one task")
    if teacher not in TEACHER_POLICIES:
        raise ConfigError(f"teacher policy must be one of {TEACHER_POLICIES}, got {teacher!r}")

    run = SequenceRun(strategy, [t.task_id for t in tasks], seed, teacher=teacher)
    man = _manifest(strategy, tasks, spec, hyper, seed, teacher, meta)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        if (run_dir / "manifest.json").exists():
            old = read_manifest(run_dir)
            done = old.pop("completed")
            if old != {k: v for k, v in man.items() if k != "completed"}:
                raise ConfigError(f"{run_dir}: existing manifest was written by a different configuration")
            man["completed"] = done
            prior = load_run(run_dir)
            run.checkpoints, run.histories = prior.checkpoints, prior.histories
        else:
            _write_json(run_dir / "manifest.json", man)

    if strategy is Strategy.TRAIN_ON_ALL:
        stages = [TaskDataset.concat(tasks, "+".join(run.task_ids))]
    else:
        stages = list(tasks)

    model = run.checkpoints[-1] if run.checkpoints else init_model(spec, seed)
    for k in range(len(run.checkpoints), len(stages)):
        mask: set[str] = set()
        old_model = None
        if k > 0 and strategy.uses_teacher:
            source = model if teacher == "rolling" else run.checkpoints[0]
            old_model = snapshot(source)
            mask = freeze_mask_for(strategy, model)
        window = None if hyper.cosine_restart else (k * hyper.epochs, len(stages) * hyper.epochs)
        model, hist = train_task(model, stages[k], hyper, mask, old_model, stage_seed(seed, k), window)
        run.checkpoints.append(model)
        run.histories.append(hist)
        if run_dir is not None:
            ckpt, hfile = f"stage{k}.ckpt", f"stage{k}_history.csv"
            save_checkpoint(model, run_dir / ckpt)
            hist.to_csv(run_dir / hfile)
            man["completed"].append({"stage": k, "task_id": stages[k].task_id,
                                     "checkpoint": ckpt, "history": hfile,
                                     "best_epoch": hist.best_epoch, "epochs_run": hist.epochs_run})
            _write_json(run_dir / "manifest.json", man)
        if on_stage is not None:
            on_stage(k, run)
    return run
