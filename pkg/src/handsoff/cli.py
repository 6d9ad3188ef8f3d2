"""Command-line front end.

    handsoff train CONFIG [--seed N] [--out DIR] [--resume | --force] [--no-plots]
    handsoff eval U_CSV CONFIG [--n-eval N] [--seed N] [--out FILE]
    handsoff rollout U_CSV CONFIG [--noise-seed N] [--out DIR] [--no-plots]
    handsoff config [PRESET]

CONFIG is a YAML file or the name of a bundled preset. Relative output
paths are resolved under ``$HANDSOFF_OUT_ROOT`` when it is set.

Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (
    ArtifactError,
    RunLock,
    atomic_write,
    controls_csv,
    phase_csv,
    read_controls,
    trajectory_csv,
    write_json,
)
from .config import PRESETS, ConfigError, RunConfig, load_config
from .dynamics import RolloutError, make_rng, rollout, sample_disturbances
from .objective import ControlSequence, CostBreakdown, sparsity_l0
from .optim import AdamState
from .trainer import STREAM_EVAL, TrainingAborted, evaluate, incremental_train, polish

OUT_ROOT_ENV = "HANDSOFF_OUT_ROOT"
CHECKPOINT = "checkpoint.json"
CHECKPOINT_SCHEMA = "handsoff.checkpoint/1"

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("handsoff")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_path(arg: str | None, default: str) -> Path:
    path = Path(arg if arg is not None else default)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _load(source: str) -> RunConfig:
    if source not in PRESETS and not Path(source).is_file():
        raise UsageError(f"config file not found: {source}")
    return load_config(source)


def _read_u(path: str, cfg: RunConfig) -> ControlSequence:
    if not Path(path).is_file():
        raise UsageError(f"control file not found: {path}")
    u = read_controls(Path(path))
    model = cfg.build_model()
    if u.horizon != cfg.train.horizon:
        raise UsageError(f"{path} has {u.horizon} steps but the config horizon is {cfg.train.horizon}")
    if u.input_dim != model.input_dim:
        raise UsageError(f"{path} has {u.input_dim} input columns, the model takes {model.input_dim}")
    return u


def _figures(out: Path, u: ControlSequence, trajs, cfg: RunConfig) -> None:
    from . import plots

    t = cfg.train
    plots.control_figure(u, out / "control.png", cfg.eval.threshold)
    plots.state_figure(trajs, t.target, out / "states.png")
    if len(t.x0) == 2:
        plots.phase_figure(trajs, t.x0, t.target, out / "phase.png")


def _write_trajectory(out: Path, traj, cfg: RunConfig) -> None:
    atomic_write(out / "traj.csv", trajectory_csv(traj))
    if len(cfg.train.x0) == 2:
        atomic_write(out / "phase.csv", phase_csv(traj, cfg.train.x0, cfg.train.target))


# --- train -------------------------------------------------------------------


class _Checkpoint:
    """Progress of one run, rewritten atomically after every stage and round."""

    def __init__(self, path: Path, config: dict):
        self.path = path
        self.data = {
            "schema": CHECKPOINT_SCHEMA,
            "config": config,
            "phase": "start",
            "index": 0,
            "params": [],
            "incremental_params": None,
            "adam": None,
            "stage_history": [],
            "polish_history": [],
            "log_records": 0,
        }

    @classmethod
    def load(cls, path: Path, config: dict) -> _Checkpoint:
        data = json.loads(path.read_text())
        if data.get("schema") != CHECKPOINT_SCHEMA:
            raise UsageError(f"{path} is not a checkpoint of this version")
        if data["config"] != config:
            raise UsageError(f"{path} was written for a different configuration or seed")
        ck = cls(path, config)
        ck.data = data
        return ck

    def save(self, **fields) -> None:
        self.data.update(fields)
        write_json(self.path, self.data)


def _cost_dicts(history) -> list[dict]:
    return [dataclasses.asdict(c) for c in history]


def _train_into(cfg: RunConfig, out: Path, resume: bool, force: bool, plots: bool) -> dict:
    t = cfg.train
    model = cfg.build_model()
    # normalise through JSON so tuples and lists compare equal on resume
    config_dict = json.loads(json.dumps(cfg.to_dict()))
    ck_path = out / CHECKPOINT
    if ck_path.exists() and resume:
        ck = _Checkpoint.load(ck_path, config_dict)
        log.info("resuming after %s %d", ck.data["phase"], ck.data["index"])
    elif ck_path.exists() and not force:
        raise UsageError(f"{out} already holds a run; pass --resume to continue it or --force to start over")
    else:
        ck = _Checkpoint(ck_path, config_dict)
    atomic_write(out / "config.yaml", cfg.dump())

    log_path = out / "train_log.jsonl"
    kept = ck.data["log_records"]
    if kept and log_path.exists():
        lines = log_path.read_text().splitlines(keepends=True)[:kept]
        log_path.write_text("".join(lines))
    log_fh = open(log_path, "a" if kept else "w")
    n_records = kept

    def record(entry: dict) -> None:
        nonlocal n_records
        log_fh.write(json.dumps(entry) + "\n")
        n_records += 1

    def sync() -> int:
        log_fh.flush()
        os.fsync(log_fh.fileno())
        return n_records

    stages = [CostBreakdown(**c) for c in ck.data["stage_history"]]
    rounds = [CostBreakdown(**c) for c in ck.data["polish_history"]]

    def on_stage(i, params):
        log.info("stage %d/%d  total %.6g", i, t.horizon, stages[-1].total)
        ck.save(phase="incremental", index=i, params=params.tolist(),
                stage_history=_cost_dicts(stages), log_records=sync())

    def on_round(r, params, adam: AdamState):
        log.info("polish round %d/%d  total %.6g", r + 1, t.polish_rounds, rounds[-1].total)
        ck.save(phase="polish", index=r, params=params.tolist(), adam=adam.to_dict(),
                polish_history=_cost_dicts(rounds), log_records=sync())

    started = time.perf_counter()
    try:
        phase = ck.data["phase"]
        if phase in ("start", "incremental"):
            start = (ck.data["index"], np.array(ck.data["params"])) if phase == "incremental" else None
            u_inc = incremental_train(t, model, log=record, history=stages, on_stage=on_stage, start=start)
            ck.save(phase="polish", index=-1, params=u_inc.flat.tolist(),
                    incremental_params=u_inc.flat.tolist(), log_records=sync())
        u_inc = ControlSequence(np.array(ck.data["incremental_params"]), model.input_dim)
        first = ck.data["index"] + 1
        adam = AdamState.from_dict(ck.data["adam"]) if ck.data["adam"] and t.keep_adam_state else None
        u_start = ControlSequence(np.array(ck.data["params"]), model.input_dim)
        u = polish(t, u_start, model, log=record, history=rounds, on_round=on_round,
                   first_round=first, adam=adam)
        ck.save(phase="done", index=t.polish_rounds - 1, params=u.flat.tolist(), log_records=sync())
    finally:
        log_fh.close()
    log.info("training took %.1f s", time.perf_counter() - started)

    e = cfg.eval
    report = evaluate(u, model, t.x0, t.target, e.n_eval, e.seed, t.noise, e.threshold)
    report_inc = evaluate(u_inc, model, t.x0, t.target, e.n_eval, e.seed, t.noise, e.threshold)
    atomic_write(out / "u.csv", controls_csv(u))
    atomic_write(out / "u_incremental.csv", controls_csv(u_inc))
    _write_trajectory(out, report.trajectories[0], cfg)
    write_json(out / "eval.json", report.to_dict())
    summary = {
        "seed": t.seed,
        "horizon": t.horizon,
        "threshold": e.threshold,
        "l0_before_polish": sparsity_l0(u_inc, e.threshold),
        "l0_after_polish": sparsity_l0(u, e.threshold),
        "eval": report.to_dict(),
        "eval_incremental": report_inc.to_dict(),
        "stage_final_costs": _cost_dicts(stages),
        "polish_final_costs": _cost_dicts(rounds),
    }
    write_json(out / "summary.json", summary)
    if plots:
        _figures(out, u, report.trajectories, cfg)
    return summary


def cmd_train(args) -> int:
    cfg = _load(args.config)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    stem = Path(args.config).stem
    out = _out_path(args.out, f"runs/{stem}-seed{cfg.train.seed}")
    out.mkdir(parents=True, exist_ok=True)
    with RunLock(out):
        summary = _train_into(cfg, out, args.resume, args.force, not args.no_plots)
    ev = summary["eval"]
    print(f"run written to {out}")
    print(f"l0 sparsity: {summary['l0_after_polish']} of {cfg.train.horizon} steps "
          f"(before polish {summary['l0_before_polish']}, threshold {summary['threshold']:g})")
    print(f"terminal error over {ev['n_eval']} held-out trajectories: "
          f"mean {ev['mean_terminal_error']:.4g}, max {ev['max_terminal_error']:.4g}")
    return EXIT_OK


# --- eval / rollout ------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _load(args.config)
    u = _read_u(args.u_csv, cfg)
    t, e = cfg.train, cfg.eval
    n_eval = e.n_eval if args.n_eval is None else args.n_eval
    seed = e.seed if args.seed is None else args.seed
    if n_eval < 1:
        raise UsageError("--n-eval must be at least 1")
    report = evaluate(u, cfg.build_model(), t.x0, t.target, n_eval, seed, t.noise, e.threshold)
    text = json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"
    lines = (f"mean terminal error {report.mean_terminal_error:.6g}\n"
             f"max terminal error {report.max_terminal_error:.6g}\n"
             f"l0 sparsity {report.l0_sparsity} (threshold {e.threshold:g})\n")
    if args.out is None:
        sys.stdout.write(text)
        sys.stderr.write(lines)
    else:
        path = _out_path(args.out, "eval.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(path, text)
        sys.stdout.write(lines)
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = _load(args.config)
    u = _read_u(args.u_csv, cfg)
    t = cfg.train
    model = cfg.build_model()
    seed = cfg.eval.seed if args.noise_seed is None else args.noise_seed
    # same draw as the first evaluation trajectory for this seed
    w = sample_disturbances(make_rng(seed, STREAM_EVAL), 1, u.horizon, t.noise, model.noise_dim).samples[0]
    traj = rollout(model, t.x0, u.values, w)
    out = _out_path(args.out, "rollout")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "u.csv", controls_csv(u))
    _write_trajectory(out, traj, cfg)
    if not args.no_plots:
        _figures(out, u, [traj], cfg)
    print(f"rollout written to {out}")
    return EXIT_OK


def cmd_config(args) -> int:
    if args.name is None:
        print("\n".join(PRESETS))
        return EXIT_OK
    if args.name not in PRESETS:
        raise UsageError(f"unknown preset {args.name!r}; available: {', '.join(PRESETS)}")
    sys.stdout.write(resources.files("handsoff.presets").joinpath(f"{args.name}.yaml").read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="handsoff", description="Sparse open-loop control by unrolled training.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="progress on stderr (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a control sequence and write a run directory")
    p.add_argument("config", help="YAML config file or preset name")
    p.add_argument("--seed", type=int, help="master seed (overrides train.seed)")
    p.add_argument("--out", help="output directory (default runs/<config>-seed<N>)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    group.add_argument("--force", action="store_true", help="discard an existing checkpoint in --out")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a control file on fresh disturbances")
    p.add_argument("u_csv")
    p.add_argument("config")
    p.add_argument("--n-eval", type=int, help="number of disturbance trajectories (default eval.n_eval)")
    p.add_argument("--seed", type=int, help="evaluation seed (default eval.seed)")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="simulate a control file once and export plot data")
    p.add_argument("u_csv")
    p.add_argument("config")
    p.add_argument("--noise-seed", type=int, help="disturbance seed (default eval.seed)")
    p.add_argument("--out", help="output directory (default rollout)")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("config", help="list presets or print one")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ArtifactError) as exc:
        print(f"handsoff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, RolloutError, OSError, RuntimeError) as exc:
        print(f"handsoff: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
