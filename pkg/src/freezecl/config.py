"""Experiment configuration (JSON).

Example::

    {
      "profile": "desk",
      "model": {"widths": [32, 64, 32, 16, 2], "split_index": 2},
      "hyper": {"temperature": 2.0},
      "strategies": ["TrainOnAll", "FineTune", "ClAll", "ClEncoder", "ClClassifier"],
      "seeds": [0, 1, 2, 3, 4],
      "teacher": "rolling",
      "data": {"generator": {"dim": 32, "shift": 5.0}, "seed": null},
      "out": "results"
    }

``data.seed = null`` pairs every run seed with the generator seed of the same
value; an integer pins one dataset for all runs. ``data.dir`` points at an
existing task directory (CSV files plus ``manifest.json``) instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import DriftSpec
from .errors import ConfigError
from .netmodel import ModelSpec, default_spec
from .strategies import ALL_STRATEGIES, TEACHER_POLICIES, Strategy
from .trainer import PROFILES, Hyper

_KEYS = {"profile", "model", "hyper", "strategies", "seeds", "teacher", "data", "out"}


@dataclass
class ExperimentConfig:
    spec: ModelSpec
    hyper: Hyper
    strategies: list[Strategy]
    seeds: list[int]
    out: Path
    drift: DriftSpec = field(default_factory=DriftSpec)
    data_seed: int | None = None
    data_dir: Path | None = None
    teacher: str = "rolling"
    profile: str = "desk"

    def generator_seeds(self) -> list[int]:
        return [self.data_seed] if self.data_seed is not None else list(self.seeds)

    def task_dir(self, run_seed: int) -> Path:
        if self.data_dir is not None:
            return self.data_dir
        g = self.data_seed if self.data_seed is not None else run_seed
        return self.out / "data" / f"seed{g}"

    def run_dir(self, strategy: Strategy, seed: int) -> Path:
        return self.out / "runs" / f"{strategy.value}-seed{seed}"


def _model_spec(d: dict | None, input_dim: int) -> ModelSpec:
    if d is None:
        return default_spec(input_dim)
    if "widths" in d:
        widths = d["widths"]
        return ModelSpec.from_widths(widths, int(d.get("split_index", min(2, len(widths) - 2))))
    return ModelSpec.from_dict(d)


def build_config(raw: dict, profile: str | None = None, seed: int | None = None,
                 out: str | Path | None = None, base: Path = Path(".")) -> ExperimentConfig:
    extra = set(raw) - _KEYS
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    profile = profile or raw.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    hyper_d = PROFILES[profile].to_dict()
    hyper_d.update(raw.get("hyper", {}))
    try:
        hyper = Hyper.from_dict(hyper_d)
    except TypeError as exc:
        raise ConfigError(f"bad hyper section: {exc}") from None

    data = dict(raw.get("data", {}))
    try:
        drift = DriftSpec(**data.get("generator", {}))
    except TypeError as exc:
        raise ConfigError(f"bad data.generator section: {exc}") from None
    data_dir = data.get("dir")
    data_dir = (base / data_dir) if data_dir is not None else None

    strategies = [Strategy.parse(s) for s in raw.get("strategies", [s.value for s in ALL_STRATEGIES])]
    seeds = [int(s) for s in raw.get("seeds", [0])]
    if seed is not None:
        seeds = [seed]
    if not strategies or not seeds:
        raise ConfigError("strategies and seeds must be non-empty")
    teacher = raw.get("teacher", "rolling")
    if teacher not in TEACHER_POLICIES:
        raise ConfigError(f"teacher must be one of {TEACHER_POLICIES}")
    out_dir = Path(out) if out is not None else base / raw.get("out", "results")
    return ExperimentConfig(
        spec=_model_spec(raw.get("model"), drift.dim),
        hyper=hyper,
        strategies=strategies,
        seeds=seeds,
        out=out_dir,
        drift=drift,
        data_seed=data.get("seed"),
        data_dir=data_dir,
        teacher=teacher,
        profile=profile,
    )


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    if path is None:
        return build_config({}, **overrides)
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return build_config(raw, base=path.parent, **overrides)
