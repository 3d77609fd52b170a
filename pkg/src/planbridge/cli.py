"""Command-line entry point: run, eval, aggregate, reproduce, selftest."""

from __future__ import annotations

import os

# Pin BLAS threading before numpy spins up so results are identical no matter
# how many worker processes share the machine.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import argparse
import dataclasses
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import nets
from .bridge import QLearner
from .envs import ENV_NAMES, get_env
from .harness import (
    APPROACHES,
    ConfigError,
    RunConfig,
    aggregate_seeds,
    build_approach,
    evaluate,
    load_run_record,
    run_online_learning,
    write_aggregate_csv,
    write_run_record,
)
from .planner import CachingPlanner
from .selftest import run_selftest

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2
EXIT_SELFTEST = 3

_MATRIX_KEYS = {"env", "envs", "approach", "approaches", "seeds", "seed"}
_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}
_KNOWN_KEYS = _MATRIX_KEYS | _FIELD_NAMES


def _parse_value(text: str):
    return yaml.safe_load(text)


def parse_config(path, overrides=()) -> list[RunConfig]:
    """Load the key-value config file, apply dotted overrides, expand the
    (envs x approaches x seeds) matrix into one RunConfig per cell."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(p.read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a key-value mapping")
        raw = dict(loaded)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        raw[key] = _parse_value(value)
    for key in raw:
        if key.split(".")[0] not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")

    envs = raw.get("envs", raw.get("env", "light_switch_door"))
    if isinstance(envs, str):
        envs = [envs]
    approaches = raw.get("approaches", raw.get("approach", "ours"))
    if isinstance(approaches, str):
        approaches = [approaches]
    seeds = raw.get("seeds", raw.get("seed", 1))
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    field_values = {k: v for k, v in raw.items() if k in _FIELD_NAMES
                    and k not in ("env", "approach", "seed")}
    if "hidden_sizes" in field_values:
        field_values["hidden_sizes"] = tuple(field_values["hidden_sizes"])

    configs = []
    try:
        for env in envs:
            for approach in approaches:
                for seed in seeds:
                    configs.append(
                        RunConfig(env=env, approach=approach, seed=int(seed),
                                  **field_values)
                    )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return configs


def _default_output() -> str:
    return os.environ.get("PLANBRIDGE_OUTPUT", "runs")


def run_many(configs: list[RunConfig], out_dir, workers: int = 1) -> list[tuple]:
    """Execute runs (optionally in a worker pool); the parent writes all
    files in sorted run-key order. Returns (config, record-or-None, error)."""
    configs = sorted(configs, key=lambda c: c.run_key)
    results = []
    if workers <= 1:
        for cfg in configs:
            try:
                results.append((cfg, run_online_learning(cfg), None))
            except Exception:
                results.append((cfg, None, traceback.format_exc()))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(cfg, pool.submit(run_online_learning, cfg)) for cfg in configs]
            for cfg, fut in futures:
                try:
                    results.append((cfg, fut.result(), None))
                except Exception:
                    results.append((cfg, None, traceback.format_exc()))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cfg, record, error in results:
        if record is not None:
            write_run_record(record, out_dir)
        else:
            (out_dir / f"{cfg.run_key}.error.json").write_text(
                json.dumps({"run": cfg.run_key, "error": error}, indent=2) + "\n"
            )
    return results


def _cmd_run(args) -> int:
    try:
        configs = parse_config(args.config, args.set or [])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = run_many(configs, args.output, args.workers)
    failed = [cfg.run_key for cfg, rec, _ in results if rec is None]
    for cfg, rec, _ in results:
        if rec is not None:
            final = rec.cycles[-1]
            print(f"{cfg.run_key}: cycles={len(rec.cycles)} "
                  f"final_train={final.train_reward:.3f} "
                  f"final_eval={final.eval_reward:.3f}")
    for key in failed:
        print(f"{key}: FAILED (see {key}.error.json)", file=sys.stderr)
    return EXIT_RUN if failed else EXIT_OK


def _cmd_eval(args) -> int:
    try:
        record = load_run_record(args.run_record)
    except (OSError, ValueError) as exc:
        print(f"cannot load run record: {exc}", file=sys.stderr)
        return EXIT_RUN
    if record.checkpoint is None:
        print("run record has no checkpoint (non-learning approach)",
              file=sys.stderr)
        return EXIT_RUN
    config = record.config
    env = get_env(config.env)
    from .envs import TaskSampler, sample_task
    from .harness import _stream_seeds

    train_seed, eval_seed, learner_seed, _ = _stream_seeds(config.seed, 4)
    train_tasks = [sample_task(env, TaskSampler("train", train_seed))
                   for _ in range(config.n_train_tasks)]
    eval_tasks = [sample_task(env, TaskSampler("eval", eval_seed))
                  for _ in range(config.n_eval_tasks)]
    policy = build_approach(config.approach, env, config,
                            train_tasks + eval_tasks,
                            np.random.default_rng(learner_seed))
    learner: QLearner = policy.learner
    learner.online = nets.params_from_json(record.checkpoint["online"], np.float32)
    learner.target = nets.params_from_json(record.checkpoint["target"], np.float32)
    learner.env_steps = int(record.checkpoint.get("env_steps", 0))
    planner = CachingPlanner(config.node_cap)
    records = evaluate(env, eval_tasks, policy, config, eval_seed,
                       cycle=len(record.cycles), planner=planner)
    for rec in records:
        print(f"{rec.task_id}: success={rec.success} steps={rec.env_steps} "
              f"alternations={rec.alternations}")
    mean = float(np.mean([r.reward for r in records]))
    print(f"mean eval reward: {mean:.3f}")
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    in_dir = Path(args.input)
    records = [load_run_record(p) for p in sorted(in_dir.glob("*.jsonl"))]
    if not records:
        print(f"no run records in {in_dir}", file=sys.stderr)
        return EXIT_RUN
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple, list] = {}
    for rec in records:
        groups.setdefault((rec.config.env, rec.config.approach), []).append(rec)
    by_env: dict[str, list] = {}
    for (env, _), recs in sorted(groups.items()):
        by_env.setdefault(env, []).extend(aggregate_seeds(recs))
    for env, rows in sorted(by_env.items()):
        write_aggregate_csv(rows, out_dir / f"{env}_aggregate.csv")
        print(f"wrote {env}_aggregate.csv ({len(rows)} rows)")
    return EXIT_OK


def reproduce_matrix(seeds: int = 8) -> list[tuple[str, str, int]]:
    """The full paper matrix; the no-feature-selection ablation is skipped in
    doorknobs (whole-state input makes it time out there)."""
    cells = []
    for env in ("light_switch_door", "doorknobs", "coffee"):
        for approach in APPROACHES:
            if env == "doorknobs" and approach == "ours_no_feature_selection":
                continue
            for seed in range(seeds):
                cells.append((env, approach, seed))
    return cells


def _cmd_reproduce(args) -> int:
    overrides = dict(
        item.partition("=")[::2] for item in (args.set or []) if "=" in item
    )
    extra = {k.strip(): _parse_value(v) for k, v in overrides.items()}
    for key in extra:
        if key not in _FIELD_NAMES or key in ("env", "approach", "seed"):
            print(f"config error: unknown override {key!r}", file=sys.stderr)
            return EXIT_CONFIG
    if "hidden_sizes" in extra:
        extra["hidden_sizes"] = tuple(extra["hidden_sizes"])
    try:
        configs = [
            RunConfig(env=env, approach=approach, seed=seed, **extra)
            for env, approach, seed in reproduce_matrix(args.seeds)
        ]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = run_many(configs, args.output, args.workers)
    ok_records = [rec for _, rec, _ in results if rec is not None]
    groups: dict[tuple, list] = {}
    for rec in ok_records:
        groups.setdefault((rec.config.env, rec.config.approach), []).append(rec)
    by_env: dict[str, list] = {}
    for (env, _), recs in sorted(groups.items()):
        by_env.setdefault(env, []).extend(aggregate_seeds(recs))
    out_dir = Path(args.output)
    for env, rows in sorted(by_env.items()):
        write_aggregate_csv(rows, out_dir / f"{env}_train.csv")
        write_aggregate_csv(rows, out_dir / f"{env}_eval.csv")
        if args.plot_data:
            _write_plot_tsv(rows, out_dir, env)
    failed = [cfg.run_key for cfg, rec, _ in results if rec is None]
    for key in failed:
        print(f"{key}: FAILED", file=sys.stderr)
    return EXIT_RUN if failed else EXIT_OK


def _write_plot_tsv(rows: list[dict], out_dir: Path, env: str) -> None:
    """Per-curve plot data: one row per cycle, one column pair per approach."""
    approaches = sorted({r["approach"] for r in rows})
    cycles = sorted({r["cycle"] for r in rows})
    table = {(r["approach"], r["cycle"]): r for r in rows}
    for split in ("train", "eval"):
        header = ["cycle"]
        for a in approaches:
            header += [f"{a}_mean", f"{a}_var"]
        lines = ["\t".join(header)]
        for cyc in cycles:
            cells = [str(cyc)]
            for a in approaches:
                row = table.get((a, cyc))
                if row is None:
                    cells += ["", ""]
                else:
                    cells += [repr(row[f"mean_smooth_{split}"]),
                              repr(row[f"var_smooth_{split}"])]
            lines.append("\t".join(cells))
        (out_dir / f"{env}_{split}_plot.tsv").write_text("\n".join(lines) + "\n")


def _cmd_selftest(args) -> int:
    return EXIT_OK if run_selftest(verbose=True) else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planbridge",
        description="Bridge-policy learning experiments (planning + RL).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config's (env x approach x seed) matrix")
    p_run.add_argument("--config", default=None, help="YAML config file")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    p_run.add_argument("--output", default=_default_output())
    p_run.add_argument("--workers", type=int, default=1)
    p_run.set_defaults(fn=_cmd_run)

    p_eval = sub.add_parser("eval", help="greedily evaluate a stored run checkpoint")
    p_eval.add_argument("run_record", help="path to a <run_key>.jsonl file")
    p_eval.set_defaults(fn=_cmd_eval)

    p_agg = sub.add_parser("aggregate", help="aggregate run records into CSVs")
    p_agg.add_argument("--input", required=True)
    p_agg.add_argument("--output", required=True)
    p_agg.set_defaults(fn=_cmd_aggregate)

    p_rep = sub.add_parser("reproduce",
                           help="full matrix: 3 envs x 6 approaches x seeds")
    p_rep.add_argument("--output", default=_default_output())
    p_rep.add_argument("--workers", type=int, default=1)
    p_rep.add_argument("--seeds", type=int, default=8)
    p_rep.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a RunConfig field for every run")
    p_rep.add_argument("--plot-data", action="store_true",
                       help="also write per-curve TSV plot data")
    p_rep.set_defaults(fn=_cmd_reproduce)

    p_self = sub.add_parser("selftest", help="run the built-in invariant battery")
    p_self.set_defaults(fn=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
