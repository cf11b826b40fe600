"""Command-line entry point: ``freezecl {gen-data,run,report,grad-check}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error,
1 anything else (including I/O failures).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ExperimentConfig, load_config
from .dataio import load_task_dir, write_task_dir
from .errors import ConfigError, FreezeCLError
from .losses import dfwf_grad_check
from .reports import relpath, write_reports
from .strategies import Strategy, read_manifest, run_sequence

log = logging.getLogger("freezecl")

GRAD_TOL = 1e-4


def cmd_gen_data(cfg: ExperimentConfig) -> list[Path]:
    written = []
    if cfg.data_dir is not None:
        targets = [(cfg.data_dir, cfg.generator_seeds()[0])]
    else:
        targets = [(cfg.task_dir(g), g) for g in cfg.generator_seeds()]
    for path, g in targets:
        written += write_task_dir(path, cfg.drift, g)
        log.info("wrote %d tasks to %s (generator seed %d)", cfg.drift.n_tasks, path, g)
    return written


def _run_one(cfg: ExperimentConfig, strategy: Strategy, seed: int) -> Path:
    run_dir = cfg.run_dir(strategy, seed)
    task_dir = cfg.task_dir(seed)
    tasks = load_task_dir(task_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    run = run_sequence(strategy, tasks, cfg.spec, cfg.hyper, seed, cfg.teacher, run_dir,
                       meta={"data_dir": relpath(task_dir, run_dir), "profile": cfg.profile})
    log.info("%s seed %d: %d stages in %.1fs", strategy.value, seed, len(run.checkpoints), time.time() - t0)
    return run_dir


def cmd_run(cfg: ExperimentConfig, jobs: int = 1) -> list[Path]:
    for seed in cfg.seeds:
        d = cfg.task_dir(seed)
        if not (d / "manifest.json").exists():
            raise ConfigError(f"dataset for seed {seed} not found at {d}; run gen-data first")
    work = [(s, seed) for s in cfg.strategies for seed in cfg.seeds]
    if jobs <= 1:
        return [_run_one(cfg, s, seed) for s, seed in work]
    with ProcessPoolExecutor(jobs) as pool:
        futures = [pool.submit(_run_one, cfg, s, seed) for s, seed in work]
        return [f.result() for f in futures]


def cmd_report(run_dirs: list[Path], report_dir: Path) -> dict:
    for d in run_dirs:
        read_manifest(d)
    averages = write_reports(run_dirs, report_dir)
    for strategy, vals in averages.items():
        print(f"{strategy:13s} avg balanced accuracy {sum(vals) / len(vals):.4f} over {len(vals)} seed(s)")
    return averages


def cmd_grad_check(seed: int = 0) -> float:
    err, n = dfwf_grad_check(seed)
    print(f"max relative error {err:.3e} over {n} parameters (eps=1e-6, tolerance {GRAD_TOL:g})")
    return err


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    common.add_argument("--out", type=Path, help="output directory (overrides config)")
    common.add_argument("--profile", choices=["desk", "paper"], help="hyperparameter profile")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="freezecl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate synthetic drifting tasks")
    run = sub.add_parser("run", parents=[common], help="train every (strategy, seed) pair")
    run.add_argument("--jobs", type=int, default=1)
    rep = sub.add_parser("report", parents=[common], help="evaluate run directories and write CSVs")
    rep.add_argument("run_dirs", nargs="*", type=Path)
    rep.add_argument("--report-dir", type=Path)
    sub.add_parser("grad-check", parents=[common], help="finite-difference check of the training loss")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "grad-check":
            return 0 if cmd_grad_check(args.seed or 0) < GRAD_TOL else 4
        cfg = load_config(args.config, profile=args.profile, seed=args.seed, out=args.out)
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "run":
            cmd_run(cfg, args.jobs)
        elif args.command == "report":
            run_dirs = args.run_dirs or sorted(p for p in (cfg.out / "runs").glob("*") if p.is_dir())
            cmd_report(run_dirs, args.report_dir or cfg.out / "report")
    except FreezeCLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
