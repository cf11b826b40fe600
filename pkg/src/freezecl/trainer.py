"""Single-task training: AdamW, cosine-annealed learning rate, balanced
batches, early stopping on validation cross-entropy, and freeze masks."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .dataio import TaskDataset, balanced_batches
from .errors import DataError, HyperparameterError, NumericError
from .losses import LossWeights, cross_entropy, dfwf_loss
from .netmodel import ModelSnapshot, SplitModel, forward


@dataclass(frozen=True)
class Hyper:
    epochs: int = 150
    patience: int = 10
    batch_size: int = 128
    lr0: float = 1e-4
    lr_min: float = 0.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    temperature: float = 2.0
    weights: LossWeights = LossWeights()
    psa_normalize: bool = False
    cosine_restart: bool = True

    def __post_init__(self):
        if isinstance(self.weights, (dict, list, tuple)):
            w = self.weights
            object.__setattr__(self, "weights", LossWeights(**w) if isinstance(w, dict) else LossWeights(*w))
        if self.epochs < 1:
            raise HyperparameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise HyperparameterError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise HyperparameterError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.lr0 <= 0:
            raise HyperparameterError(f"lr0 must be > 0, got {self.lr0}")
        if self.temperature <= 0:
            raise HyperparameterError(f"temperature must be > 0, got {self.temperature}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyper":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise HyperparameterError(f"unknown hyperparameters {sorted(extra)}")
        return cls(**d)


PROFILES = {
    "paper": Hyper(),
    "desk": Hyper(epochs=40, batch_size=32, patience=5),
}


def cosine_lr(epoch: int, total_epochs: int, lr0: float, lr_min: float = 0.0) -> float:
    if total_epochs <= 0:
        raise HyperparameterError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise HyperparameterError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: Iterable[tuple[str, ad.Tensor]], state: OptimState, lr: float, hyper: Hyper) -> None:
    """Decoupled-weight-decay Adam update, in place.

    The caller passes only the parameters that may move; anything left out
    (a frozen partition) is untouched, decay included.
    """
    params = list(params)
    for name, p in params:
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data *= 1.0 - lr * hyper.weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)


@dataclass
class EpochRecord:
    epoch: int
    ce: float
    lwf: float
    psa: float
    total: float
    val_loss: float
    lr: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int | None = None

    @property
    def best_val_loss(self) -> float:
        return min(r.val_loss for r in self.records)

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "ce", "lwf", "psa", "total", "val_loss", "lr"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.ce), repr(r.lwf), repr(r.psa), repr(r.total),
                            repr(r.val_loss), repr(r.lr)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        h = cls([EpochRecord(int(r["epoch"]), float(r["ce"]), float(r["lwf"]), float(r["psa"]),
                             float(r["total"]), float(r["val_loss"]), float(r["lr"])) for r in rows])
        if h.records:
            vals = [r.val_loss for r in h.records]
            h.best_epoch = int(np.argmin(vals))
        return h


def validation_loss(model: SplitModel | ModelSnapshot, X: np.ndarray, y: np.ndarray) -> float:
    _, logits = forward(model, X)
    return cross_entropy(logits, y).item()


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def train_task(model: SplitModel, task: TaskDataset, hyper: Hyper, mask: Iterable[str] = (),
               old: ModelSnapshot | None = None, seed: int = 0,
               lr_window: tuple[int, int] | None = None) -> tuple[SplitModel, TrainHistory]:
    """Train a copy of ``model`` on the task's train split.

    Returns the parameters of the epoch with the lowest validation
    cross-entropy. Parameters named in ``mask`` still receive gradients but
    are never updated. ``lr_window = (offset, horizon)`` places this run's
    epochs inside a longer cosine schedule; by default the schedule spans
    exactly ``hyper.epochs``.
    """
    offset, horizon = lr_window if lr_window is not None else (0, hyper.epochs)
    X_tr, y_tr = task.split("train")
    X_val, y_val = task.split("val")
    for name, y in (("train", y_tr), ("val", y_val)):
        if len(np.unique(y)) < 2:
            raise DataError(f"{task.task_id}: {name} split needs both classes")

    model = model.copy()
    frozen = set(mask)
    unknown = frozen - set(model.params)
    if unknown:
        raise HyperparameterError(f"freeze mask names unknown parameters {sorted(unknown)}")
    movable = [(k, p) for k, p in model.params.items() if k not in frozen]
    state = OptimState()
    history = TrainHistory()
    best_val = math.inf
    best_state = model.state()
    stale = 0

    for epoch in range(hyper.epochs):
        lr = cosine_lr(offset + epoch, horizon, hyper.lr0, hyper.lr_min)
        sums = np.zeros(4)
        batches = balanced_batches(y_tr, hyper.batch_size, epoch_seed(seed, epoch))
        for b, idx in enumerate(batches):
            model.zero_grad()
            with ad.Tape() as tape:
                parts = dfwf_loss(model, X_tr[idx], y_tr[idx], old, hyper.weights,
                                  hyper.temperature, hyper.psa_normalize)
            if not math.isfinite(parts.total):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            tape.backward(parts.graph, model.parameters())
            adamw_step(movable, state, lr, hyper)
            sums += (parts.ce, parts.lwf, parts.psa, parts.total)
        means = sums / max(len(batches), 1)
        val = validation_loss(model, X_val, y_val)
        if not math.isfinite(val):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.records.append(EpochRecord(epoch, *map(float, means), val, lr))
        if val < best_val:
            best_val = val
            best_state = model.state()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= hyper.patience:
                history.stopped_epoch = epoch
                break

    model.load_state(best_state)
    model.zero_grad()
    return model, history


def with_overrides(hyper: Hyper, **kw) -> Hyper:
    return replace(hyper, **kw)
