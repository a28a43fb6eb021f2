"""Command-line front end.

Verbs: train-expert, record-demos, ingest-mocap, train-gail, evaluate,
export-plots. Exit codes: 0 ok, 1 runtime fault, 2 usage/config error.
MIMICKIT_LOG sets log verbosity. Output directories are never overwritten
unless --force is given; training commands checkpoint periodically and on
faults, and --resume continues a run whose config hash matches.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from . import features as feat
from . import mocap
from .arm import ArmEnv, ArmFault
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, config_hash, load_config, to_dict
from .demos import DemoFormatError, DemoSet, read_demoset, write_demoset
from .gail import (GAIL_METRIC_COLUMNS, Discriminator, GailTrainer,
                   LayoutMismatchError, evaluate_task)
from .mocap import MocapParseError
from .trpo import (METRIC_COLUMNS, ExpertTrainer, GaussianPolicy, TrainingFault,
                   ValueFn, record_demos)
from .zfilter import ZFilter

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAULT, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


def _setup_logging():
    level = os.environ.get("MIMICKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _prepare_out(path: str, force: bool, resuming: bool = False):
    if os.path.exists(path) and os.listdir(path) and not (force or resuming):
        raise UsageError(f"output directory {path} exists and is not empty "
                         f"(pass --force to overwrite)")
    os.makedirs(path, exist_ok=True)


def _fmt_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _append_metrics(path: str, rows: list[dict], columns: list[str]):
    new_file = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt_cell(row[c]) for c in columns])


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


# ---------------------------------------------------------------------------
# Trainer <-> checkpoint mapping
# ---------------------------------------------------------------------------

def _expert_checkpoint(trainer: ExpertTrainer, cfg: ExperimentConfig) -> Checkpoint:
    return Checkpoint(
        kind="expert", iteration=trainer.iteration, config=to_dict(cfg),
        config_hash=config_hash(cfg),
        rng_states={"main": trainer.rng.bit_generator.state},
        filters={"obs": trainer.obs_filter.state_dict(),
                 "reward": trainer.reward_filter.state_dict() if trainer.reward_filter else None,
                 "disc": None},
        policy_spec=trainer.policy.spec, policy_params=trainer.policy.params.copy(),
        value_spec=trainer.valuefn.spec, value_params=trainer.valuefn.params.copy(),
        value_out_mean=trainer.valuefn.out_mean, value_out_scale=trainer.valuefn.out_scale)


def _restore_expert(cp: Checkpoint, cfg: ExperimentConfig) -> ExpertTrainer:
    trainer = ExpertTrainer(cfg.env, cfg.trpo, policy_hidden=cfg.policy_hidden,
                            value_hidden=cfg.value_hidden, seed=cfg.seed,
                            workers=cfg.workers, filter_rewards=cfg.filter_rewards)
    trainer.policy = GaussianPolicy(spec=cp.policy_spec, params=cp.policy_params.copy())
    trainer.valuefn = ValueFn(spec=cp.value_spec, params=cp.value_params.copy(),
                              out_mean=cp.value_out_mean, out_scale=cp.value_out_scale)
    trainer.obs_filter = ZFilter.from_state(cp.filters["obs"])
    trainer.reward_filter = (ZFilter.from_state(cp.filters["reward"])
                             if cp.filters.get("reward") else None)
    trainer.rng = _restore_rng(cp.rng_states["main"])
    trainer.iteration = cp.iteration
    return trainer


def _gail_checkpoint(trainer: GailTrainer, cfg: ExperimentConfig) -> Checkpoint:
    disc = trainer.disc
    return Checkpoint(
        kind="gail", iteration=trainer.iteration, config=to_dict(cfg),
        config_hash=config_hash(cfg),
        rng_states={"main": trainer.rng.bit_generator.state,
                    "disc": trainer.disc_rng.bit_generator.state},
        filters={"obs": trainer.obs_filter.state_dict(),
                 "reward": None,
                 "disc": disc.zfilter.state_dict() if disc.zfilter else None},
        policy_spec=trainer.policy.spec, policy_params=trainer.policy.params.copy(),
        value_spec=trainer.valuefn.spec, value_params=trainer.valuefn.params.copy(),
        value_out_mean=trainer.valuefn.out_mean, value_out_scale=trainer.valuefn.out_scale,
        disc_spec=disc.spec, disc_params=disc.params.copy(),
        disc_adam_m=disc.adam_m.copy(), disc_adam_v=disc.adam_v.copy(),
        disc_adam_t=disc.adam_t, disc_mask=disc.mask, disc_context_k=disc.context_k)


def _restore_gail(cp: Checkpoint, cfg: ExperimentConfig, demos: DemoSet) -> GailTrainer:
    trainer = GailTrainer(cfg.env, demos, cfg.gail, cfg.trpo,
                          policy_hidden=cfg.policy_hidden, value_hidden=cfg.value_hidden,
                          disc_hidden=cfg.disc_hidden, seed=cfg.seed, workers=cfg.workers)
    trainer.policy = GaussianPolicy(spec=cp.policy_spec, params=cp.policy_params.copy())
    trainer.valuefn = ValueFn(spec=cp.value_spec, params=cp.value_params.copy(),
                              out_mean=cp.value_out_mean, out_scale=cp.value_out_scale)
    trainer.disc = Discriminator(
        spec=cp.disc_spec, params=cp.disc_params.copy(), mask=cp.disc_mask,
        context_k=cp.disc_context_k,
        zfilter=ZFilter.from_state(cp.filters["disc"]) if cp.filters.get("disc") else None,
        adam_m=cp.disc_adam_m.copy(), adam_v=cp.disc_adam_v.copy(), adam_t=cp.disc_adam_t)
    trainer.obs_filter = ZFilter.from_state(cp.filters["obs"])
    trainer.rng = _restore_rng(cp.rng_states["main"])
    trainer.disc_rng = _restore_rng(cp.rng_states["disc"])
    trainer.iteration = cp.iteration
    return trainer


def _run_chunked(trainer, total: int, interval: int, out_dir: str, columns, make_cp):
    """Run to `total` iterations, checkpointing and appending metrics per chunk."""
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    metrics_path = os.path.join(out_dir, "metrics.csv")
    try:
        while trainer.iteration < total:
            n = min(interval, total - trainer.iteration)
            rows = trainer.run(n)
            _append_metrics(metrics_path, rows, columns)
            save_checkpoint(make_cp(trainer), ckpt_path)
    except (TrainingFault, ArmFault):
        save_checkpoint(make_cp(trainer), ckpt_path + ".abort")
        log.exception("training fault at iteration %d; abort checkpoint written", trainer.iteration)
        raise
    return ckpt_path, metrics_path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train_expert(args) -> int:
    cfg = load_config(args.config, seed=args.seed, workers=args.workers)
    if args.resume:
        cp = load_checkpoint(args.resume)
        if cp.kind != "expert":
            raise UsageError(f"checkpoint {args.resume} is a {cp.kind} checkpoint")
        if cp.config_hash != config_hash(cfg):
            raise UsageError("refusing to resume: config hash does not match the checkpoint")
        trainer = _restore_expert(cp, cfg)
    else:
        trainer = ExpertTrainer(cfg.env, cfg.trpo, policy_hidden=cfg.policy_hidden,
                                value_hidden=cfg.value_hidden, seed=cfg.seed,
                                workers=cfg.workers, filter_rewards=cfg.filter_rewards)
    _prepare_out(args.out, args.force, resuming=bool(args.resume))
    total = args.iterations if args.iterations is not None else cfg.trpo_iterations
    ckpt, metrics = _run_chunked(trainer, total, cfg.checkpoint_interval, args.out,
                                 METRIC_COLUMNS, lambda t: _expert_checkpoint(t, cfg))
    last = trainer.metrics[-1] if trainer.metrics else None
    print(f"trained expert to iteration {trainer.iteration}"
          + (f" (mean task return {last['mean_episode_task_return']:.3f})" if last else ""))
    print(f"checkpoint: {ckpt}\nmetrics: {metrics}")
    return EXIT_OK


def cmd_record_demos(args) -> int:
    cp = load_checkpoint(args.checkpoint)
    cfg = config_mod.from_dict(cp.config)
    env = ArmEnv(cfg.env)
    policy = GaussianPolicy(spec=cp.policy_spec, params=cp.policy_params)
    obs_filter = ZFilter.from_state(cp.filters["obs"])
    feat.validate_mask(args.mask)
    if not (0 <= args.context < args.context_k):
        raise UsageError(f"--context {args.context} outside [0, {args.context_k})")
    _prepare_out(args.out, args.force)
    demos = record_demos(policy, env, args.episodes, args.mask, args.context,
                         np.random.default_rng(args.seed if args.seed is not None else 0),
                         obs_filter=obs_filter, context_k=args.context_k)
    write_demoset(demos, args.out)
    print(f"recorded {demos.size} rows ({args.episodes} episodes, mask {args.mask}, "
          f"context {args.context}) -> {args.out}")
    return EXIT_OK


def _parse_feature_items(text: str):
    items = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token.startswith("ee:"):
            items.append(mocap.ee_vectors(*token[3:].split("+")))
        elif token in (mocap.JOINT_ANGLES, mocap.JOINT_VELOCITIES, mocap.ROOT_LINEAR_VELOCITY):
            items.append(token)
        else:
            raise UsageError(f"unknown feature item {token!r}")
    if not items:
        raise UsageError("empty feature spec")
    return tuple(items)


def cmd_ingest_mocap(args) -> int:
    spec = mocap.FeatureSpec(items=_parse_feature_items(args.features), dt=args.dt)
    try:
        with open(args.asf) as fh:
            skeleton = mocap.parse_asf(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read ASF {args.asf}: {exc}") from exc
    except MocapParseError as exc:
        raise UsageError(f"{args.asf}: {exc}") from exc

    clips = []
    for entry in args.amc:
        path, _, label = entry.partition(":")
        clips.append((path, int(label) if label else 0))
    context_k = max(label for _, label in clips) + 1

    parts: list[DemoSet] = []
    for path, context in clips:
        try:
            with open(path) as fh:
                seq = mocap.parse_amc(fh.read(), skeleton)
        except OSError as exc:
            raise UsageError(f"cannot read AMC {path}: {exc}") from exc
        except MocapParseError as exc:
            raise UsageError(f"{path}: {exc}") from exc
        resampled = mocap.resample_spline(seq, args.dt, skeleton=skeleton)
        parts.append(mocap.extract_features(resampled, skeleton, spec,
                                            context_label=context, context_k=context_k,
                                            source=f"mocap:{os.path.basename(path)}"))
    merged = DemoSet(feature_names=parts[0].feature_names, dt=args.dt,
                     rows=np.vstack([p.rows for p in parts]),
                     contexts=np.concatenate([p.contexts for p in parts]),
                     context_k=context_k,
                     source=f"mocap:{os.path.basename(args.asf)} ({len(parts)} clips)")
    _prepare_out(args.out, args.force)
    write_demoset(merged, args.out)
    print(f"ingested {len(parts)} clip(s): {merged.size} rows at dt={args.dt}s -> {args.out}")
    return EXIT_OK


def cmd_train_gail(args) -> int:
    cfg = load_config(args.config, seed=args.seed, workers=args.workers)
    demos = read_demoset(args.demos)
    if args.resume:
        cp = load_checkpoint(args.resume)
        if cp.kind != "gail":
            raise UsageError(f"checkpoint {args.resume} is a {cp.kind} checkpoint")
        if cp.config_hash != config_hash(cfg):
            raise UsageError("refusing to resume: config hash does not match the checkpoint")
        trainer = _restore_gail(cp, cfg, demos)
    else:
        trainer = GailTrainer(cfg.env, demos, cfg.gail, cfg.trpo,
                              policy_hidden=cfg.policy_hidden, value_hidden=cfg.value_hidden,
                              disc_hidden=cfg.disc_hidden, seed=cfg.seed, workers=cfg.workers)
    _prepare_out(args.out, args.force, resuming=bool(args.resume))
    total = args.iterations if args.iterations is not None else cfg.gail.iterations
    ckpt, metrics = _run_chunked(trainer, total, cfg.gail.checkpoint_interval, args.out,
                                 GAIL_METRIC_COLUMNS, lambda t: _gail_checkpoint(t, cfg))
    print(f"trained imitator to iteration {trainer.iteration}")
    print(f"checkpoint: {ckpt}\nmetrics: {metrics}")
    return EXIT_OK


EVAL_COLUMNS = ["context", "n_episodes", "mean_return", "std_return",
                "mean_final_distance", "mean_offset_x", "mean_offset_y"]


def cmd_evaluate(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    cp = load_checkpoint(args.checkpoint)
    cfg = config_mod.from_dict(cp.config)
    env = ArmEnv(cfg.env)
    policy = GaussianPolicy(spec=cp.policy_spec, params=cp.policy_params)
    obs_filter = ZFilter.from_state(cp.filters["obs"])
    context_k = policy.spec.input_dim - env.obs_dim
    stats = evaluate_task(policy, env, args.episodes,
                          np.random.default_rng(args.seed if args.seed is not None else 0),
                          obs_filter=obs_filter, context_k=context_k)
    print(f"episodes: {stats.n_episodes}")
    print(f"task return: {stats.mean_return:.4f} +- {stats.std_return:.4f}")
    print(f"final-window end-effector distance: {stats.mean_final_distance:.4f} m")
    rows = [{"context": "all", "n_episodes": stats.n_episodes,
             "mean_return": stats.mean_return, "std_return": stats.std_return,
             "mean_final_distance": stats.mean_final_distance,
             "mean_offset_x": float("nan"), "mean_offset_y": float("nan")}]
    for ctx in stats.per_context:
        print(f"  context {ctx.context}: return {ctx.mean_return:.4f}, "
              f"final distance {ctx.mean_final_distance:.4f}, "
              f"offset ({ctx.mean_offset[0]:+.4f}, {ctx.mean_offset[1]:+.4f})")
        rows.append({"context": ctx.context, "n_episodes": ctx.n_episodes,
                     "mean_return": ctx.mean_return, "std_return": float("nan"),
                     "mean_final_distance": ctx.mean_final_distance,
                     "mean_offset_x": float(ctx.mean_offset[0]),
                     "mean_offset_y": float(ctx.mean_offset[1])})
    if args.out:
        if os.path.exists(args.out) and not args.force:
            raise UsageError(f"{args.out} exists (pass --force to overwrite)")
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EVAL_COLUMNS)
            for row in rows:
                writer.writerow([_fmt_cell(row[c]) for c in EVAL_COLUMNS])
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_export_plots(args) -> int:
    tables = []
    header = None
    for path in args.metrics:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise UsageError(f"{path} is empty")
        if header is None:
            header = rows[0]
        elif rows[0] != header:
            raise UsageError(f"schema mismatch: {path} has columns {rows[0]}, "
                             f"expected {header}")
        tables.append((os.path.splitext(os.path.basename(path))[0], rows[1:]))
    if "iteration" not in header:
        raise UsageError("metrics files must carry an 'iteration' column")
    it_col = header.index("iteration")
    series_cols = [i for i, name in enumerate(header) if i != it_col]

    out_rows = []
    per_key: dict[tuple, list[float]] = {}
    for run, rows in tables:
        for row in rows:
            iteration = row[it_col]
            for i in series_cols:
                value = float(row[i])
                out_rows.append((run, iteration, header[i], value))
                per_key.setdefault((iteration, header[i]), []).append(value)
    if len(tables) > 1:
        for (iteration, series), values in sorted(per_key.items()):
            if len(values) == len(tables):
                arr = np.asarray(values)
                out_rows.append(("mean", iteration, series, float(arr.mean())))
                out_rows.append(("std", iteration, series, float(arr.std())))
    if os.path.exists(args.out) and not args.force:
        raise UsageError(f"{args.out} exists (pass --force to overwrite)")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "iteration", "series", "value"])
        for run, iteration, series, value in out_rows:
            writer.writerow([run, iteration, series, repr(value)])
    print(f"wrote {len(out_rows)} rows ({len(tables)} run(s)) -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mimickit",
                                     description="Adversarial imitation learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False, out=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help="rollout worker count")
        if out:
            p.add_argument("--out", required=True, help="output directory/file")
        p.add_argument("--force", action="store_true", help="allow overwriting --out")

    p = sub.add_parser("train-expert", help="train an RL expert on the task reward")
    common(p, config=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--iterations", type=int, default=None, help="override iteration budget")
    p.set_defaults(fn=cmd_train_expert)

    p = sub.add_parser("record-demos", help="log demonstrations from a trained policy")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--mask", default=feat.END_EFFECTOR_TARGET, choices=feat.MASKS)
    p.add_argument("--context", type=int, default=0, help="context label for all rows")
    p.add_argument("--context-k", type=int, default=1, help="context alphabet size")
    p.set_defaults(fn=cmd_record_demos)

    p = sub.add_parser("ingest-mocap", help="ASF/AMC -> resample -> features -> DemoSet")
    common(p)
    p.add_argument("--asf", required=True)
    p.add_argument("--amc", action="append", required=True,
                   help="AMC path, optionally PATH:CONTEXT (repeatable)")
    p.add_argument("--dt", type=float, default=0.030)
    p.add_argument("--features", default="joint_angles,joint_velocities",
                   help="comma list: joint_angles,joint_velocities,"
                        "root_linear_velocity,ee:bone1+bone2")
    p.set_defaults(fn=cmd_ingest_mocap)

    p = sub.add_parser("train-gail", help="adversarial imitation from a DemoSet")
    common(p, config=True)
    p.add_argument("--demos", required=True, help="DemoSet directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--iterations", type=int, default=None, help="override iteration budget")
    p.set_defaults(fn=cmd_train_gail)

    p = sub.add_parser("evaluate", help="task-objective evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="optional statistics CSV")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("export-plots", help="merge metrics CSVs into tidy long format")
    p.add_argument("metrics", nargs="+", help="metrics.csv files")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.fn(args)
    except (UsageError, ConfigError, LayoutMismatchError, DemoFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingFault, ArmFault, CheckpointError, MocapParseError, OSError) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
