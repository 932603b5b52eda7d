"""Command line: train, synthesize, eval, sweep, inspect-checkpoint.

Log verbosity comes from ``BIDPM_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import checkpoint as ckpt_io
from .config import (ConfigError, ExperimentConfig, build_dataset, build_test_set, config_to_text, derive_seed,
                     load_config, parse_config)
from .evaluate import EvalReport, evaluate
from .field import VelocityField, init_field, parse_embedding
from .flow import synthesize, uniform_grid
from .tables import (METRICS_COLUMNS, REPORT_COLUMNS, TIMING_COLUMNS, PointTable, dataset_table, metrics_rows,
                     read_points, report_row, scatter_svg, summary_text, write_csv, write_points)
from .trainer import OptimizerState, TrainingDiverged, TrainState, train

log = logging.getLogger("bidpm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


class CommandError(RuntimeError):
    pass


def _lock(out: Path) -> FileLock:
    out.mkdir(parents=True, exist_ok=True)
    return FileLock(str(out / ".lock"), timeout=0)


def _acquire(out: Path):
    lock = _lock(out)
    try:
        lock.acquire()
    except Timeout:
        raise CommandError(f"{out} is in use by another command") from None
    return lock


# ------------------------------------------------------------------- state io


def field_from_checkpoint(ck: ckpt_io.Checkpoint, use_ema: bool = True) -> tuple[VelocityField, ExperimentConfig]:
    cfg = parse_config(ck.config_text)
    tc = cfg.train
    live = ck.group("live")
    if not live:
        raise ckpt_io.CheckpointError("checkpoint holds no live parameters")
    dim = live["layers.0.weight"].shape[0] - parse_embedding(tc.embedding)
    skeleton = init_field(dim, tc.hidden, parse_embedding(tc.embedding), depth=tc.depth)
    arrays = ck.group("ema") if use_ema else live
    return skeleton.with_arrays(arrays), cfg


def state_from_checkpoint(ck: ckpt_io.Checkpoint) -> TrainState:
    field, _ = field_from_checkpoint(ck, use_ema=False)
    opt = OptimizerState(ck.group("adam.m"), ck.group("adam.v"), ck.opt_step)
    return TrainState(field, ck.group("ema"), opt, ck.step)


# ------------------------------------------------------------------ commands


def run_train(cfg: ExperimentConfig, out: Path) -> Path:
    """Train per ``cfg``; write checkpoints, data tables and metrics into ``out``."""
    cfg.validate()
    out = Path(out)
    with _acquire(out):
        text = config_to_text(cfg)
        (out / "config.txt").write_text(text)
        dataset = build_dataset(cfg)
        write_points(out / "train_data.csv", dataset_table(dataset))
        write_points(out / "test_data.csv", dataset_table(build_test_set(cfg)))

        interval = cfg.checkpoint_interval

        def periodic(rec, state):
            if interval and state.step % interval == 0:
                ckpt_io.save(out / f"checkpoint_{state.step:07d}.bin", ckpt_io.from_state(text, state))

        try:
            result = train(dataset, cfg.train, callback=periodic)
        except TrainingDiverged as e:
            ckpt_io.save(out / "checkpoint_aborted.bin", ckpt_io.from_state(text, e.state))
            raise
        records = result.records
        write_csv(out / "metrics.csv", METRICS_COLUMNS, metrics_rows(records))
        write_csv(out / "timing.csv", TIMING_COLUMNS, [[str(r.step), f"{r.wall_ms:.3f}"] for r in records])
        if result.warnings:
            (out / "warnings.txt").write_text("\n".join(result.warnings) + "\n")
        return ckpt_io.save(out / "checkpoint.bin", ckpt_io.from_state(text, result.state))


def run_synthesize(checkpoint: Path, table: PointTable, direction: str, use_ema: bool = True) -> PointTable:
    """Transport source rows (forward) or target rows (backward) to the other side."""
    field, cfg = field_from_checkpoint(ckpt_io.load(checkpoint), use_ema)
    grid = uniform_grid(cfg.eval_grid_steps())
    side, other = ("source", "target") if direction == "forward" else ("target", "source")
    rows = table.select(side)
    if rows.points.shape[1] != field.dim:
        raise CommandError(f"input has dimension {rows.points.shape[1]}, checkpoint field has {field.dim}")
    moved = synthesize(field, rows.points, grid, direction) if len(rows.points) else rows.points.copy()
    return PointTable(dict(table.meta), [other] * len(moved), rows.label.copy(), rows.partner.copy(), moved)


def run_eval(checkpoint: Path, table: PointTable, out: Path | None = None, use_ema: bool = True) -> EvalReport:
    field, cfg = field_from_checkpoint(ckpt_io.load(checkpoint), use_ema)
    grid = uniform_grid(cfg.eval_grid_steps())
    x, z, labels = table.paired()
    if len(x) == 0:
        raise CommandError("test table has no paired source rows")
    target_all = table.select("target").points
    report = evaluate(field, x, z, grid, source_labels=labels, target_means=table.target_means(), pi=table.pi(),
                      target_all=target_all, kernel=cfg.train.kernel(), method=cfg.method, rho=cfg.data.rho)
    if out is not None:
        out = Path(out)
        with _acquire(out):
            write_csv(out / "eval.csv", REPORT_COLUMNS, [report_row(report)])
            (out / "eval_summary.txt").write_text(summary_text(report))
            synth = synthesize(field, x, grid, "forward")
            src = table.select("source")
            pairs = [(i, int(p)) for i, p in enumerate(src.partner) if p >= 0]
            (out / "scatter.svg").write_text(scatter_svg(src.points, target_all, synth, pairs))
    return report


def _sweep_one(args):
    cfg, run_dir, combo = args
    try:
        run_train(cfg, run_dir)
        test = read_points(Path(run_dir) / "test_data.csv")
        rep = run_eval(Path(run_dir) / "checkpoint.bin", test, run_dir, cfg.eval.use_ema)
        return combo, cfg.seed, "ok", "", rep
    except Exception as e:  # a failed combination must not stop the sweep
        return combo, cfg.seed, "failed", f"{type(e).__name__}: {e}", None


SWEEP_COLUMNS = ["run", "seed", "status", "error"] + REPORT_COLUMNS


def sweep_combinations(cfg: ExperimentConfig) -> list[tuple[str, int, float]]:
    methods = cfg.sweep.method or (cfg.method,)
    steps = cfg.sweep.grid_steps or (cfg.train.grid_steps,)
    rhos = cfg.sweep.rho or (cfg.data.rho,)
    return list(itertools.product(methods, steps, rhos))


def sweep_config(cfg: ExperimentConfig, combo: tuple[str, int, float]) -> ExperimentConfig:
    method, n, rho = combo
    seed = derive_seed(cfg.seed, method, n, rho)
    return replace(cfg, train=replace(cfg.train, method=method, grid_steps=n, seed=seed),
                   data=replace(cfg.data, rho=rho))


def run_sweep(cfg: ExperimentConfig, out: Path, jobs: int | None = None) -> list[list[str]]:
    cfg.validate()
    out = Path(out)
    combos = sweep_combinations(cfg)
    tasks = []
    for i, combo in enumerate(combos):
        method, n, rho = combo
        run_dir = out / f"run{i:03d}_{method}_N{n}_rho{rho:g}"
        tasks.append((sweep_config(cfg, combo), run_dir, combo))
    jobs = jobs or cfg.sweep.jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]

    rows = []
    for (combo, seed, status, err, rep), (_, run_dir, _) in zip(results, tasks):
        if rep is None:
            method, n, rho = combo
            tail = [method, str(n), repr(float(rho))] + [""] * (len(REPORT_COLUMNS) - 3)
        else:
            tail = report_row(rep)
        rows.append([run_dir.name, str(seed), status, err] + tail)
    with _acquire(out):
        write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
        (out / "sweep_summary.txt").write_text(_trend_summary(results))
    return rows


def _trend_summary(results) -> str:
    """Flag paired-fraction sweeps whose forward error increases with rho."""
    lines = []
    groups: dict[tuple[str, int], list[tuple[float, float]]] = {}
    for (method, n, rho), _, status, _, rep in results:
        if rep is not None:
            groups.setdefault((method, n), []).append((rho, rep.forward_mean))
    for (method, n), vals in sorted(groups.items()):
        vals.sort()
        if len(vals) < 2:
            continue
        bad = [(a, b) for (a, ea), (b, eb) in zip(vals, vals[1:]) if eb > ea]
        status = "non-increasing" if not bad else "VIOLATED at " + ", ".join(f"{a:g}->{b:g}" for a, b in bad)
        lines.append(f"{method} N={n}: error vs rho {status}: " + ", ".join(f"{r:g}:{e:.4g}" for r, e in vals))
    failed = [combo for combo, _, status, _, _ in results if status != "ok"]
    for combo in failed:
        lines.append(f"failed run: {combo}")
    return "\n".join(lines) + ("\n" if lines else "")


def inspect_checkpoint(path: Path) -> str:
    ck = ckpt_io.load(path)
    lines = [f"format version: {ckpt_io.VERSION}", f"step: {ck.step}", f"adam step: {ck.opt_step}", "arrays:"]
    for name, arr in ck.arrays.items():
        lines.append(f"  {name} {tuple(arr.shape)} |x|_max={float(np.abs(arr).max()) if arr.size else 0.0:.4g}")
    lines.append("config:")
    lines += ["  " + line for line in ck.config_text.splitlines()]
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- argparse


def _bool(s: str) -> bool:
    v = s.lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {s!r}")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed_override", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed_override))
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bidpm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a velocity field from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed-override", type=int)

    s = sub.add_parser("synthesize", help="transport a point table with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--direction", choices=("forward", "backward"), default="forward")
    s.add_argument("--use-ema", type=_bool, default=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a paired test table")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--input", required=True, help="test table (dataset format)")
    e.add_argument("--out", required=True)
    e.add_argument("--use-ema", type=_bool, default=True)

    w = sub.add_parser("sweep", help="train and evaluate every combination of sweep.* lists")
    w.add_argument("--config", required=True)
    w.add_argument("--out")
    w.add_argument("--seed-override", type=int)
    w.add_argument("--jobs", type=int)

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint summary")
    i.add_argument("--checkpoint", required=True)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BIDPM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = _load(args)
            out = Path(args.out or cfg.out)
            path = run_train(cfg, out)
            print(path)
        elif args.command == "synthesize":
            table = run_synthesize(Path(args.checkpoint), read_points(args.input), args.direction, args.use_ema)
            print(write_points(args.out, table))
        elif args.command == "eval":
            rep = run_eval(Path(args.checkpoint), read_points(args.input), Path(args.out), args.use_ema)
            sys.stdout.write(summary_text(rep))
        elif args.command == "sweep":
            cfg = _load(args)
            out = Path(args.out or cfg.out)
            run_sweep(cfg, out, args.jobs)
            print(out / "sweep.csv")
        elif args.command == "inspect-checkpoint":
            sys.stdout.write(inspect_checkpoint(Path(args.checkpoint)))
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"error: {e} (last good state saved as checkpoint_aborted.bin)", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, CommandError, ckpt_io.CheckpointError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
