"""Online-learning harness: approaches, cycles, evaluation, aggregation.

One run = (env, approach, seed). Each cycle collects training trajectories,
updates the learner (where the approach learns at all), then greedily
evaluates on a task set frozen at run start.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .bridge import (
    CALL_PLANNER,
    ActionEncoding,
    EpsilonSchedule,
    QLearner,
    candidate_actions,
    epsilon_greedy,
    full_state_dim,
    make_bridge_mdp,
    make_full_state_mdp,
)
from .envs import EnvSpec, TaskSampler, get_env, sample_task
from .planner import CachingPlanner
from .metapolicy import EVAL, TRAIN, EpisodeRecord, solve_task

APPROACHES = (
    "ours",
    "ours_no_feature_selection",
    "ours_no_callplanner",
    "random_bridge",
    "pure_planning",
    "maple_q",
)

_CYCLE_DEFAULTS = {"light_switch_door": 100, "doorknobs": 100, "coffee": 150}
_EVAL_TASK_DEFAULTS = {"light_switch_door": 10, "doorknobs": 10, "coffee": 1}


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """One run's fully-resolved configuration (defaults per the method's
    hyperparameter tables)."""

    env: str
    approach: str
    seed: int
    cycles: int = 0  # 0 -> per-env default
    trajectories_per_cycle: int = 5
    steps_per_trajectory: int = 100
    n_train_tasks: int = 1
    n_eval_tasks: int = 0  # 0 -> per-env default
    gamma: float = 0.8
    lr: float = 1e-3
    polyak_tau: float = 2.5e-3
    epsilon_decay: float = 3.8e-5
    epsilon_init: float = 1.0
    epsilon_floor: float = 0.05
    hidden_sizes: tuple = (32, 32)
    train_iters: int = 10**4
    replay_capacity: int = 10**6
    batch_size: int = 128
    n_sample: int = 10
    node_cap: int = 10**6
    smooth_window: int = 25

    def __post_init__(self):
        if self.env not in _CYCLE_DEFAULTS:
            raise ConfigError(f"env: unknown environment {self.env!r}")
        if self.approach not in APPROACHES:
            raise ConfigError(f"approach: unknown approach {self.approach!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma: must be in (0, 1), got {self.gamma}")
        if self.cycles == 0:
            self.cycles = _CYCLE_DEFAULTS[self.env]
        if self.n_eval_tasks == 0:
            self.n_eval_tasks = _EVAL_TASK_DEFAULTS[self.env]
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        for name in ("cycles", "trajectories_per_cycle", "steps_per_trajectory",
                     "n_train_tasks", "n_eval_tasks", "train_iters", "batch_size",
                     "n_sample", "replay_capacity", "node_cap", "smooth_window"):
            if int(getattr(self, name)) < (0 if name == "train_iters" else 1):
                raise ConfigError(f"{name}: must be positive")

    @property
    def run_key(self) -> str:
        return f"{self.env}__{self.approach}__seed{self.seed}"

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden_sizes"] = list(self.hidden_sizes)
        return out


@dataclass
class CycleRecord:
    cycle: int
    train_reward: float
    eval_reward: float
    env_steps: int
    epsilon: float

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunRecord:
    config: RunConfig
    cycles: list[CycleRecord]
    episodes: list[dict]
    checkpoint: dict | None
    wall_clock_sec: float = 0.0  # persisted to the sidecar meta file only


# --------------------------------------------------------------------------
# Approach policy stacks (metapolicy protocol implementations).


class LearnedBridge:
    """Q-learning bridge: 'ours' plus its two ablations via flags."""

    def __init__(self, learner: QLearner, gamma: float, full_state: bool,
                 include_call_planner: bool, uses_planner: bool, pad_dim: int = 0):
        self.learner = learner
        self.gamma = gamma
        self.full_state = full_state
        self.include_call_planner = include_call_planner
        self.uses_planner = uses_planner
        self.pad_dim = pad_dim
        self.learns = True

    def make_mdp(self, state, env, task, steps_used):
        if self.full_state:
            return make_full_state_mdp(
                state, env, task, steps_used, self.pad_dim, self.gamma,
                include_call_planner=self.include_call_planner,
            )
        return make_bridge_mdp(
            state, env, task, steps_used, self.gamma,
            include_call_planner=self.include_call_planner,
        )

    def act(self, state, mdp, rng, mode):
        if mode == EVAL:
            return epsilon_greedy(self.learner, state, mdp, rng, epsilon=0.0)
        return epsilon_greedy(self.learner, state, mdp, rng)


class RandomBridge:
    """No learning; uniform choice among the same candidate sets."""

    uses_planner = True
    learner = None
    learns = False

    def __init__(self, gamma: float, n_sample: int):
        self.gamma = gamma
        self.n_sample = n_sample

    def make_mdp(self, state, env, task, steps_used):
        return make_bridge_mdp(state, env, task, steps_used, self.gamma)

    def act(self, state, mdp, rng, mode):
        cands = candidate_actions(state, mdp, self.n_sample, rng)
        return cands[int(rng.integers(len(cands)))]


class PurePlanning:
    """No learning; hands control straight back to the planner at every stuck."""

    uses_planner = True
    learner = None
    learns = False

    def __init__(self, gamma: float):
        self.gamma = gamma

    def make_mdp(self, state, env, task, steps_used):
        return make_bridge_mdp(state, env, task, steps_used, self.gamma)

    def act(self, state, mdp, rng, mode):
        return CALL_PLANNER


def build_approach(approach: str, env: EnvSpec, config: RunConfig,
                   tasks: list, rng: np.random.Generator):
    """Instantiate the approach's policy stack (learner included where one
    exists). ``tasks`` must contain every task of the run so full-state
    input dims can be sized up front."""
    if approach not in APPROACHES:
        raise ConfigError(f"approach: unknown approach {approach!r}")
    if approach == "pure_planning":
        return PurePlanning(config.gamma)
    if approach == "random_bridge":
        return RandomBridge(config.gamma, config.n_sample)

    full_state = approach in ("ours_no_feature_selection", "maple_q")
    include_cp = approach not in ("ours_no_callplanner", "maple_q")
    uses_planner = approach != "maple_q"
    pad_dim = max(full_state_dim(t) for t in tasks) if full_state else 0

    probe_task = tasks[0]
    probe_state = probe_task.initial_state
    if full_state:
        probe = make_full_state_mdp(probe_state, env, probe_task, 0, pad_dim,
                                    config.gamma, include_call_planner=include_cp)
    else:
        probe = make_bridge_mdp(probe_state, env, probe_task, 0, config.gamma,
                                include_call_planner=include_cp)
    learner = QLearner(
        input_state_dim=probe.state_dim,
        encoding=ActionEncoding.for_env(env),
        featurizer=probe.featurizer,
        env=env,
        rng=rng,
        gamma=config.gamma,
        lr=config.lr,
        hidden=config.hidden_sizes,
        batch_size=config.batch_size,
        n_sample=config.n_sample,
        train_iters=config.train_iters,
        polyak_tau=config.polyak_tau,
        replay_capacity=config.replay_capacity,
        schedule=EpsilonSchedule(config.epsilon_init, config.epsilon_decay,
                                 config.epsilon_floor),
    )
    return LearnedBridge(learner, config.gamma, full_state, include_cp,
                         uses_planner, pad_dim)


# --------------------------------------------------------------------------
# The online learning loop.


def _stream_seeds(seed: int, n: int) -> list[int]:
    """Deterministic per-purpose integer seeds derived from the run seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def evaluate(env: EnvSpec, tasks: list, policy, config: RunConfig,
             eval_seed: int, cycle: int, planner=None) -> list[EpisodeRecord]:
    """Greedy evaluation on the frozen task set; never touches the learner."""
    records = []
    for i, task in enumerate(tasks):
        rng = np.random.default_rng([eval_seed, cycle, i])
        records.append(
            solve_task(env, task, planner, policy, EVAL,
                       trajectory_step_budget=config.steps_per_trajectory,
                       rng=rng, task_id=f"eval{i}")
        )
    return records


def run_online_learning(config: RunConfig) -> RunRecord:
    """Execute one full run and return its record."""
    t0 = time.perf_counter()
    env = get_env(config.env)
    train_seed, eval_seed, learner_seed, explore_seed = _stream_seeds(config.seed, 4)
    train_sampler = TaskSampler("train", train_seed)
    eval_sampler = TaskSampler("eval", eval_seed)
    train_tasks = [sample_task(env, train_sampler) for _ in range(config.n_train_tasks)]
    eval_tasks = [sample_task(env, eval_sampler) for _ in range(config.n_eval_tasks)]

    policy = build_approach(config.approach, env, config,
                            train_tasks + eval_tasks,
                            np.random.default_rng(learner_seed))
    explore_rng = np.random.default_rng(explore_seed)
    learner = policy.learner
    planner = CachingPlanner(config.node_cap)

    cycles: list[CycleRecord] = []
    episodes: list[dict] = []
    manual_env_steps = 0
    for cycle in range(config.cycles):
        train_rewards = []
        for t in range(config.trajectories_per_cycle):
            task = train_tasks[t % len(train_tasks)]
            rec = solve_task(
                env, task, planner, policy, TRAIN,
                trajectory_step_budget=config.steps_per_trajectory,
                rng=explore_rng, task_id=f"train{t % len(train_tasks)}",
            )
            train_rewards.append(rec.reward)
            manual_env_steps += rec.env_steps
            episodes.append({"cycle": cycle, "mode": TRAIN, **rec.to_json()})
        if policy.learns:
            learner.train_cycle()
        eval_records = evaluate(env, eval_tasks, policy, config, eval_seed, cycle,
                                planner=planner)
        for rec in eval_records:
            episodes.append({"cycle": cycle, "mode": EVAL, **rec.to_json()})
        env_steps = learner.env_steps if learner is not None else manual_env_steps
        epsilon = learner.epsilon() if learner is not None else 0.0
        cycles.append(
            CycleRecord(
                cycle=cycle,
                train_reward=float(np.mean(train_rewards)),
                eval_reward=float(np.mean([r.reward for r in eval_records])),
                env_steps=int(env_steps),
                epsilon=float(epsilon),
            )
        )

    checkpoint = None
    if learner is not None:
        checkpoint = {
            "online": nets.params_to_json(learner.online),
            "target": nets.params_to_json(learner.target),
            "env_steps": int(learner.env_steps),
            "replay_size": len(learner.replay),
        }
    return RunRecord(config, cycles, episodes, checkpoint,
                     wall_clock_sec=time.perf_counter() - t0)


# --------------------------------------------------------------------------
# Metrics and aggregation.


def smooth_reward(series: list, window: int = 25) -> list:
    """Trailing mean over the last ``window`` entries (truncated at the start)."""
    out = []
    for i in range(len(series)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(series[lo : i + 1])))
    return out


def aggregate_seeds(records: list[RunRecord], window: int = 25) -> list[dict]:
    """Per-cycle mean/variance of smooth rewards across seed runs.

    All records must share a config up to the seed. Variance is the sample
    variance (0 for a single record).
    """
    if not records:
        raise ValueError("no records to aggregate")
    ref = {k: v for k, v in records[0].config.to_json().items() if k != "seed"}
    for rec in records[1:]:
        other = {k: v for k, v in rec.config.to_json().items() if k != "seed"}
        if other != ref:
            raise ValueError("records disagree on non-seed config fields")
    n_cycles = len(records[0].cycles)
    smooth_train = np.array(
        [smooth_reward([c.train_reward for c in r.cycles], window) for r in records]
    )
    smooth_eval = np.array(
        [smooth_reward([c.eval_reward for c in r.cycles], window) for r in records]
    )
    env_steps = np.array([[c.env_steps for c in r.cycles] for r in records], dtype=float)

    def var(mat, i):
        col = mat[:, i]
        return float(np.var(col, ddof=1)) if len(col) > 1 else 0.0

    rows = []
    for i in range(n_cycles):
        rows.append(
            {
                "env": records[0].config.env,
                "approach": records[0].config.approach,
                "cycle": i,
                "mean_smooth_train": float(np.mean(smooth_train[:, i])),
                "var_smooth_train": var(smooth_train, i),
                "mean_smooth_eval": float(np.mean(smooth_eval[:, i])),
                "var_smooth_eval": var(smooth_eval, i),
                "mean_env_steps": float(np.mean(env_steps[:, i])),
            }
        )
    return rows


AGGREGATE_COLUMNS = (
    "env",
    "approach",
    "cycle",
    "mean_smooth_train",
    "var_smooth_train",
    "mean_smooth_eval",
    "var_smooth_eval",
    "mean_env_steps",
)


def write_aggregate_csv(rows: list[dict], path) -> None:
    lines = [",".join(AGGREGATE_COLUMNS)]
    for row in rows:
        lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in AGGREGATE_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Run record persistence (JSON-lines; one file per run plus sidecars).


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_run_record(record: RunRecord, out_dir) -> Path:
    """Write <run_key>.jsonl (+ checkpoint and meta sidecars); returns the path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    key = record.config.run_key
    lines = [_dumps({"kind": "config", **record.config.to_json()})]
    by_cycle: dict[int, list[dict]] = {}
    for ep in record.episodes:
        by_cycle.setdefault(ep["cycle"], []).append(ep)
    for cyc in record.cycles:
        for ep in by_cycle.get(cyc.cycle, []):
            lines.append(_dumps({"kind": "episode", **ep}))
        lines.append(_dumps({"kind": "cycle", **cyc.to_json()}))
    ckpt_name = None
    if record.checkpoint is not None:
        ckpt_name = f"{key}.ckpt.json"
        (out_dir / ckpt_name).write_text(_dumps(record.checkpoint) + "\n")
    lines.append(_dumps({"kind": "final", "checkpoint": ckpt_name}))
    path = out_dir / f"{key}.jsonl"
    path.write_text("\n".join(lines) + "\n")
    (out_dir / f"{key}.meta.json").write_text(
        _dumps({"wall_clock_sec": record.wall_clock_sec}) + "\n"
    )
    return path


def load_run_record(path) -> RunRecord:
    """Rehydrate a RunRecord written by write_run_record (no checkpoint load)."""
    config = None
    cycles: list[CycleRecord] = []
    episodes: list[dict] = []
    checkpoint_name = None
    for line in Path(path).read_text().splitlines():
        obj = json.loads(line)
        kind = obj.pop("kind")
        if kind == "config":
            obj["hidden_sizes"] = tuple(obj["hidden_sizes"])
            config = RunConfig(**obj)
        elif kind == "cycle":
            cycles.append(CycleRecord(**obj))
        elif kind == "episode":
            episodes.append(obj)
        elif kind == "final":
            checkpoint_name = obj.get("checkpoint")
    if config is None:
        raise ValueError(f"{path}: missing config line")
    checkpoint = None
    if checkpoint_name:
        ckpt_path = Path(path).parent / checkpoint_name
        if ckpt_path.exists():
            checkpoint = json.loads(ckpt_path.read_text())
    return RunRecord(config, cycles, episodes, checkpoint)
