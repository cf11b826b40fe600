"""Drifting binary tasks, CSV storage and class-balanced batching.

Label 0 is authentic, label 1 is fake. The authentic class is a fixed Gaussian
mixture shared by every task; each task moves the fake class to a new region,
which is what makes sequential training forget.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, HyperparameterError, ParseError, SchemaError

SPLITS = ("train", "val", "eval")


@dataclass
class TaskDataset:
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    task_id: str = "task0"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype="<U5")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def rows(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise SchemaError(f"unknown split {split!r}")
        return np.flatnonzero(self.splits == split)

    def split(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.rows(split)
        return self.features[idx], self.labels[idx]

    def validate(self) -> "TaskDataset":
        n = len(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] != n or self.splits.shape != (n,):
            raise DataError(f"{self.task_id}: inconsistent shapes")
        unknown = set(np.unique(self.splits)) - set(SPLITS)
        if unknown:
            raise SchemaError(f"{self.task_id}: unknown split tags {sorted(unknown)}")
        if not np.isin(self.labels, (0, 1)).all():
            raise SchemaError(f"{self.task_id}: labels outside {{0, 1}}")
        for s in SPLITS:
            y = self.labels[self.splits == s]
            if y.size == 0:
                raise DataError(f"{self.task_id}: empty {s} split")
            if len(np.unique(y)) < 2:
                raise DataError(f"{self.task_id}: {s} split has a single class")
        return self

    @classmethod
    def concat(cls, tasks: Sequence["TaskDataset"], task_id: str = "all") -> "TaskDataset":
        return cls(
            np.concatenate([t.features for t in tasks]),
            np.concatenate([t.labels for t in tasks]),
            np.concatenate([t.splits for t in tasks]),
            task_id,
        )


@dataclass(frozen=True)
class DriftSpec:
    dim: int = 32
    n_tasks: int = 4
    n_train: int = 2000
    n_val: int = 400
    n_eval: int = 600
    fake_fraction: float = 0.5
    # authentic class: mixture of identical-covariance Gaussians
    real_components: int = 2
    real_spread: float = 1.0
    # fake class: real centroid + shift * direction_k
    shift: float = 5.0
    noise: float = 1.0
    rotation: float = 0.0
    direction_seed: int = 7

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DriftSpec":
        return cls(**d)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def real_means(drift: DriftSpec, seed: int) -> np.ndarray:
    """Mixture means of the authentic class; independent of the task index."""
    rng = _rng(seed, 0xA0)
    return rng.normal(size=(drift.real_components, drift.dim)) * drift.real_spread / np.sqrt(drift.dim)


def fake_direction(drift: DriftSpec, task_index: int) -> np.ndarray:
    rng = _rng(drift.direction_seed, 0xD1, task_index)
    u = rng.normal(size=drift.dim)
    return u / np.linalg.norm(u)


def _rotation(drift: DriftSpec, task_index: int) -> np.ndarray | None:
    if drift.rotation == 0.0 or task_index == 0:
        return None
    # rotate within a seeded plane by rotation * task_index radians
    rng = _rng(drift.direction_seed, 0xB2, task_index)
    q, _ = np.linalg.qr(rng.normal(size=(drift.dim, 2)))
    a, b = q[:, 0], q[:, 1]
    th = drift.rotation * task_index
    R = np.eye(drift.dim)
    R += (np.cos(th) - 1) * (np.outer(a, a) + np.outer(b, b))
    R += np.sin(th) * (np.outer(b, a) - np.outer(a, b))
    return R


def synth_task(task_index: int, drift: DriftSpec = DriftSpec(), seed: int = 0) -> TaskDataset:
    rng = _rng(seed, 0xC3, task_index)
    means = real_means(drift, seed)
    centroid = means.mean(axis=0)
    fake_mean = centroid + drift.shift * fake_direction(drift, task_index)
    R = _rotation(drift, task_index)

    feats, labels, splits = [], [], []
    for split, n in zip(SPLITS, (drift.n_train, drift.n_val, drift.n_eval)):
        n_fake = int(round(n * drift.fake_fraction))
        n_real = n - n_fake
        comp = rng.integers(drift.real_components, size=n_real)
        real = means[comp] + drift.noise * rng.normal(size=(n_real, drift.dim))
        noise = drift.noise * rng.normal(size=(n_fake, drift.dim))
        if R is not None:
            noise = noise @ R.T
        fake = fake_mean + noise
        feats += [real, fake]
        labels += [np.zeros(n_real, dtype=np.int64), np.ones(n_fake, dtype=np.int64)]
        splits += [np.full(n, split)]
    X = np.concatenate(feats)
    y = np.concatenate(labels)
    s = np.concatenate(splits)
    perm = rng.permutation(len(y))
    return TaskDataset(X[perm], y[perm], s[perm], f"task{task_index}")


def synth_sequence(drift: DriftSpec = DriftSpec(), seed: int = 0) -> list[TaskDataset]:
    return [synth_task(k, drift, seed) for k in range(drift.n_tasks)]


def save_csv(task: TaskDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(task.dim)] + ["label", "split"])
        for x, y, s in zip(task.features, task.labels, task.splits):
            w.writerow([repr(float(v)) for v in x] + [int(y), s])


def load_csv(path: str | Path, task_id: str | None = None) -> TaskDataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        d = len(header) - 2
        if d < 1 or header[-2:] != ["label", "split"] or header[:d] != [f"f{j}" for j in range(d)]:
            raise SchemaError(f"{path}:1: header must be f0,...,f{{d-1}},label,split")
        feats, labels, splits = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 2:
                raise ParseError(f"{path}:{lineno}: expected {d + 2} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:d]])
                label = int(row[d])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if label not in (0, 1):
                raise SchemaError(f"{path}:{lineno}: label {label} outside {{0, 1}}")
            if row[d + 1] not in SPLITS:
                raise SchemaError(f"{path}:{lineno}: unknown split {row[d + 1]!r}")
            labels.append(label)
            splits.append(row[d + 1])
    task = TaskDataset(np.array(feats).reshape(-1, d), np.array(labels), np.array(splits),
                       task_id or path.stem)
    return task.validate()


def write_task_dir(out: str | Path, drift: DriftSpec, seed: int) -> list[Path]:
    """Generate every task to CSV plus the manifest needed to regenerate them."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for task in synth_sequence(drift, seed):
        p = out / f"{task.task_id}.csv"
        save_csv(task, p)
        paths.append(p)
    manifest = {"generator": drift.to_dict(), "seed": seed, "tasks": [p.name for p in paths]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


def load_task_dir(path: str | Path) -> list[TaskDataset]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{path}: no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    return [load_csv(path / name) for name in manifest["tasks"]]


def balanced_batches(labels: np.ndarray, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Index batches holding ``batch_size // 2`` rows of each class.

    The minority class is topped up by sampling with replacement so the epoch
    length follows the majority class. A trailing partial batch is dropped.
    """
    if batch_size < 2 or batch_size % 2:
        raise HyperparameterError(f"batch_size must be even and >= 2, got {batch_size}")
    labels = np.asarray(labels)
    real = np.flatnonzero(labels == 0)
    fake = np.flatnonzero(labels == 1)
    if real.size == 0 or fake.size == 0:
        raise DataError("balanced batching needs both classes")
    rng = np.random.default_rng(epoch_seed)
    n = max(real.size, fake.size)
    pools = []
    for idx in (real, fake):
        order = rng.permutation(idx)
        if order.size < n:
            order = np.concatenate([order, rng.choice(idx, size=n - order.size, replace=True)])
        pools.append(order)
    half = batch_size // 2
    batches = []
    for b in range(n // half):
        sl = slice(b * half, (b + 1) * half)
        batches.append(rng.permutation(np.concatenate([pools[0][sl], pools[1][sl]])))
    return batches
