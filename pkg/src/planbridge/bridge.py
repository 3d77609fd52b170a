"""Bridge-MDP construction at stuck states and the Double-DQN skill learner.

The MDP built at a stuck state sees only the robot and one focus object, and
its action space is the environment's skills plus the atomic CallPlanner
action. Reward is sparse: 1 exactly when the task goal holds in the next
state. The learner is a from-scratch Double DQN over sampled skill
parameterizations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GroundAction,
    GroundAtom,
    ObjectRef,
    State,
    Task,
    goal_holds,
    object_distance,
)
from .envs.base import EnvSpec, interactable_objects, step
from .nets import (
    AdamState,
    MLPParams,
    adam_step,
    backward_batch,
    forward_batch,
    init_mlp,
    polyak,
)
from .planner import DONE, STUCK, Skeleton, make_plan_policy, plan_for_task


class _CallPlanner:
    """Singleton sentinel for the hand-control-back action."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CallPlanner"


CALL_PLANNER = _CallPlanner()

# CallPlanner rollout outcomes.
OUTCOME_GOAL = "goal"
OUTCOME_HORIZON = "horizon"
OUTCOME_STUCK = "stuck"


@dataclass(frozen=True)
class ActionEncoding:
    """Fixed featurization of actions: skill one-hot (CallPlanner last) plus
    zero-padded continuous parameters."""

    skill_names: tuple[str, ...]
    max_param_dim: int

    @property
    def dim(self) -> int:
        return len(self.skill_names) + 1 + self.max_param_dim

    def slot(self, skill_name: str) -> int:
        return self.skill_names.index(skill_name)

    def encode(self, action) -> np.ndarray:
        vec = np.zeros(self.dim)
        if action is CALL_PLANNER:
            vec[len(self.skill_names)] = 1.0
            return vec
        vec[self.slot(action.skill.name)] = 1.0
        base = len(self.skill_names) + 1
        vec[base : base + len(action.params)] = action.params
        return vec

    @classmethod
    def for_env(cls, env: EnvSpec) -> "ActionEncoding":
        return cls(
            tuple(s.name for s in env.skills),
            max((s.param_dim for s in env.skills), default=0),
        )


@dataclass(frozen=True)
class Featurizer:
    """Robot-relative view of projected vectors fed to the Q-net.

    Replay keeps raw projections; this transform (subtract the robot position
    from every positioned block, zero the robot's own) is applied on the way
    into the network so the learned policy is translation invariant.
    """

    state_dim: int
    pos_dim: int
    robot_offset: int
    positioned_offsets: tuple[int, ...]

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, copy=True)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if self.pos_dim:
            r0 = self.robot_offset
            robot_pos = X[:, r0 : r0 + self.pos_dim].copy()
            for off in self.positioned_offsets:
                X[:, off : off + self.pos_dim] -= robot_pos
            X[:, r0 : r0 + self.pos_dim] = 0.0
        return X[0] if single else X


@dataclass(frozen=True)
class BridgeMDP:
    """The RL problem constructed at one stuck state."""

    env: EnvSpec
    focus_objects: tuple[ObjectRef, ...]
    goal: frozenset[GroundAtom]
    gamma: float
    task_horizon_remaining: int
    include_call_planner: bool = True
    state_dim: int = 0
    featurizer: Featurizer = None
    bindings: tuple[tuple[str, tuple[ObjectRef, ...]], ...] = ()

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")

    @property
    def mask_key(self) -> tuple:
        """Candidate availability: bound skill names plus the CallPlanner flag."""
        return (tuple(name for name, _ in self.bindings), self.include_call_planner)


def select_focus_object(state: State, env: EnvSpec) -> ObjectRef:
    """The interactable object nearest the robot; ties break by name."""
    robot = env.robot_object(state)
    candidates = sorted(interactable_objects(env, state), key=lambda o: o.name)
    if not candidates:
        raise ValueError(f"{env.name}: no interactable objects to focus on")
    return min(candidates, key=lambda o: (object_distance(state, robot, o), o.name))


def _skill_bindings(env: EnvSpec, objects: list[ObjectRef]):
    """Type-consistent object bindings for each skill, lexicographic order."""
    by_type: dict[str, list[ObjectRef]] = {}
    for obj in sorted(objects, key=lambda o: (o.type.name, o.name)):
        by_type.setdefault(obj.type.name, []).append(obj)
    out = []
    for skill in env.skills:
        pools = [by_type.get(t.name, []) for t in skill.object_signature]
        for combo in itertools.product(*pools):
            out.append((skill.name, tuple(combo)))
    return tuple(out)


def _max_interactable_dim(env: EnvSpec) -> int:
    return max(t.dim for t in env.interactable_types)


def make_bridge_mdp(
    state: State,
    env: EnvSpec,
    task: Task,
    steps_used: int,
    gamma: float = 0.8,
    include_call_planner: bool = True,
) -> BridgeMDP:
    """Focus-object MDP at a stuck state: robot plus nearest interactable."""
    robot = env.robot_object(state)
    focus = select_focus_object(state, env)
    state_dim = robot.type.dim + _max_interactable_dim(env)
    positioned = [0] if robot.type.position_dim else []
    if focus.type.position_dim:
        positioned.append(robot.type.dim)
    featurizer = Featurizer(
        state_dim=state_dim,
        pos_dim=env.position_dim if robot.type.position_dim else 0,
        robot_offset=0,
        positioned_offsets=tuple(positioned),
    )
    return BridgeMDP(
        env=env,
        focus_objects=(robot, focus),
        goal=task.goal,
        gamma=gamma,
        task_horizon_remaining=task.horizon - steps_used,
        include_call_planner=include_call_planner,
        state_dim=state_dim,
        featurizer=featurizer,
        bindings=_skill_bindings(env, [robot, focus]),
    )


def make_full_state_mdp(
    state: State,
    env: EnvSpec,
    task: Task,
    steps_used: int,
    pad_dim: int,
    gamma: float = 0.8,
    include_call_planner: bool = True,
) -> BridgeMDP:
    """No-feature-selection variant: every object's features, fixed order."""
    objects = state.objects
    robot = env.robot_object(state)
    offsets, positioned, robot_offset = [], [], 0
    cursor = 0
    for obj in objects:
        offsets.append(cursor)
        if obj is robot or obj == robot:
            robot_offset = cursor
        if obj.type.position_dim:
            positioned.append(cursor)
        cursor += obj.type.dim
    if cursor > pad_dim:
        raise ValueError(f"pad_dim {pad_dim} too small for state of dim {cursor}")
    featurizer = Featurizer(
        state_dim=pad_dim,
        pos_dim=env.position_dim if robot.type.position_dim else 0,
        robot_offset=robot_offset,
        positioned_offsets=tuple(positioned),
    )
    return BridgeMDP(
        env=env,
        focus_objects=tuple(objects),
        goal=task.goal,
        gamma=gamma,
        task_horizon_remaining=task.horizon - steps_used,
        include_call_planner=include_call_planner,
        state_dim=pad_dim,
        featurizer=featurizer,
        bindings=_skill_bindings(env, list(objects)),
    )


def full_state_dim(task: Task) -> int:
    return sum(o.type.dim for o in task.objects)


def project_state(state: State, mdp: BridgeMDP) -> np.ndarray:
    """Concatenated feature vectors of the MDP's objects, zero-padded to the
    run's fixed length."""
    parts = []
    for obj in mdp.focus_objects:
        if obj not in state:
            raise ValueError(f"projection object {obj!r} missing from state")
        parts.append(state[obj])
    vec = np.concatenate(parts) if parts else np.zeros(0)
    if vec.shape[0] > mdp.state_dim:
        raise ValueError("projection longer than declared state dim")
    if vec.shape[0] < mdp.state_dim:
        vec = np.concatenate([vec, np.zeros(mdp.state_dim - vec.shape[0])])
    return vec


def candidate_actions(
    state: State, mdp: BridgeMDP, n_sample: int, rng: np.random.Generator
) -> list:
    """n_sample uniform parameterizations per bound skill, plus CallPlanner."""
    del state  # candidates depend on the MDP's bindings, not feature values
    out = []
    for skill_name, objects in mdp.bindings:
        skill = mdp.env.skill_named(skill_name)
        if skill.param_dim:
            lows = np.array([lo for lo, _ in skill.param_bounds])
            highs = np.array([hi for _, hi in skill.param_bounds])
            draws = rng.uniform(lows, highs, size=(n_sample, skill.param_dim))
        else:
            draws = np.zeros((n_sample, 0))
        for row in draws:
            out.append(GroundAction(skill, objects, tuple(float(p) for p in row)))
    if mdp.include_call_planner:
        out.append(CALL_PLANNER)
    return out


def bridge_reward(next_state: State, goal) -> int:
    """Sparse goal reward: 1 iff every goal atom holds in the next state."""
    return 1 if goal_holds(goal, next_state) else 0


def call_planner_rollout(
    env: EnvSpec,
    state: State,
    task: Task,
    steps_used: int,
    planner=None,
    node_cap: int = 10**6,
):
    """Replan and execute as one atomic transition.

    Returns (next_state, steps_consumed, outcome) where outcome is goal,
    horizon, or stuck. A planning failure counts as stuck with zero steps.
    """
    if planner is None:
        planner = lambda e, x, g: plan_for_task(e, x, g, node_cap=node_cap)
    if goal_holds(task.goal, state):
        return state, 0, OUTCOME_GOAL
    skeleton = planner(env, state, task.goal)
    if skeleton is None:
        return state, 0, OUTCOME_STUCK
    policy = make_plan_policy(skeleton, env)
    x = state
    consumed = 0
    while True:
        if goal_holds(task.goal, x):
            return x, consumed, OUTCOME_GOAL
        if policy.status == DONE:
            return x, consumed, OUTCOME_STUCK  # plan exhausted short of the goal
        if steps_used + consumed >= task.horizon:
            return x, consumed, OUTCOME_HORIZON
        action = policy.next_action(x)
        x = step(env, x, action)
        consumed += 1
        policy.observe(x)
        if policy.status == STUCK:
            if goal_holds(task.goal, x):
                return x, consumed, OUTCOME_GOAL
            return x, consumed, OUTCOME_STUCK


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear annealing: eps(t) = max(floor, eps0 - decay * t)."""

    eps0: float = 1.0
    decay: float = 3.8e-5
    floor: float = 0.05

    def value(self, t: int) -> float:
        return max(self.floor, self.eps0 - self.decay * t)


@dataclass
class TransitionRecord:
    """One replayed experience; vectors are the raw projected states."""

    x: np.ndarray
    action: np.ndarray  # encoded
    reward: float
    x_next: np.ndarray
    terminal: bool
    mask_key: tuple = ((), True)


class ReplayBuffer:
    """FIFO ring buffer over contiguous column arrays."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int,
                 dtype=np.float32):
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.dtype = dtype
        self._alloc = 0
        self._size = 0
        self._head = 0
        self._mask_ids: dict[tuple, int] = {}
        self._mask_keys: list[tuple] = []

    def _ensure(self, n):
        if n <= self._alloc:
            return
        new_alloc = min(self.capacity, max(256, 2 * self._alloc, n))
        def grow(name, width):
            old = getattr(self, name, None)
            arr = np.zeros((new_alloc, width), dtype=self.dtype) if width else None
            if width:
                if old is not None:
                    arr[: self._alloc] = old
                setattr(self, name, arr)
        grow("xs", self.state_dim)
        grow("acts", self.action_dim)
        grow("xns", self.state_dim)
        for name, dt in (("rs", self.dtype), ("terms", np.bool_), ("masks", np.int32)):
            old = getattr(self, name, None)
            arr = np.zeros(new_alloc, dtype=dt)
            if old is not None:
                arr[: self._alloc] = old
            setattr(self, name, arr)
        self._alloc = new_alloc

    def __len__(self):
        return self._size

    def mask_id(self, key: tuple) -> int:
        if key not in self._mask_ids:
            self._mask_ids[key] = len(self._mask_keys)
            self._mask_keys.append(key)
        return self._mask_ids[key]

    def mask_key(self, mask_id: int) -> tuple:
        return self._mask_keys[mask_id]

    def add(self, rec: TransitionRecord):
        self._ensure(min(self.capacity, self._size + 1))
        i = self._head
        self.xs[i] = rec.x
        self.acts[i] = rec.action
        self.xns[i] = rec.x_next
        self.rs[i] = rec.reward
        self.terms[i] = rec.terminal
        self.masks[i] = self.mask_id(rec.mask_key)
        self._head = (self._head + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def record_at(self, i: int) -> TransitionRecord:
        return TransitionRecord(
            x=self.xs[i].copy(),
            action=self.acts[i].copy(),
            reward=float(self.rs[i]),
            x_next=self.xns[i].copy(),
            terminal=bool(self.terms[i]),
            mask_key=self.mask_key(int(self.masks[i])),
        )


class QLearner:
    """Double-DQN over encoded parameterized skills, trained from replay."""

    def __init__(
        self,
        input_state_dim: int,
        encoding: ActionEncoding,
        featurizer: Featurizer,
        env: EnvSpec,
        rng: np.random.Generator,
        gamma: float = 0.8,
        lr: float = 1e-3,
        hidden=(32, 32),
        batch_size: int = 128,
        n_sample: int = 10,
        train_iters: int = 10**4,
        polyak_tau: float = 2.5e-3,
        replay_capacity: int = 10**6,
        schedule: EpsilonSchedule | None = None,
        dtype=np.float32,
    ):
        self.encoding = encoding
        self.featurizer = featurizer
        self.env = env
        self.rng = rng
        self.gamma = gamma
        self.lr = lr
        self.batch_size = batch_size
        self.n_sample = n_sample
        self.train_iters = train_iters
        self.polyak_tau = polyak_tau
        self.dtype = dtype
        self.input_dim = input_state_dim + encoding.dim
        self.online = init_mlp(self.input_dim, list(hidden), rng, dtype=dtype)
        self.target = self.online.copy()
        self.adam = AdamState.zeros_like(self.online)
        self.replay = ReplayBuffer(
            replay_capacity, input_state_dim, encoding.dim, dtype=dtype
        )
        self.schedule = schedule or EpsilonSchedule()
        self.env_steps = 0

    # ------------------------------------------------------------------ act
    def epsilon(self) -> float:
        return self.schedule.value(self.env_steps)

    def q_value(self, proj: np.ndarray, action, params: MLPParams | None = None) -> float:
        params = params or self.online
        feat = self.featurizer.apply(proj)
        enc = self.encoding.encode(action)
        row = np.concatenate([feat, enc]).astype(params.weights[0].dtype)
        return float(forward_batch(params, row[None, :])[0])

    def q_values(self, proj: np.ndarray, candidates, params: MLPParams | None = None
                 ) -> np.ndarray:
        params = params or self.online
        feat = self.featurizer.apply(proj)
        encs = np.stack([self.encoding.encode(a) for a in candidates])
        X = np.hstack([np.tile(feat, (len(candidates), 1)), encs])
        return forward_batch(params, X.astype(params.weights[0].dtype))

    # ------------------------------------------------------------- learning
    def record(self, rec: TransitionRecord):
        self.replay.add(rec)

    def _candidate_encodings(self, mask_key: tuple, n_rows: int) -> np.ndarray:
        """Fresh candidate encodings for n_rows records sharing one mask.

        Returns (n_rows, C, enc_dim); draw order is fixed by the mask's
        binding order so the learner's RNG stream stays deterministic.
        """
        skill_names, include_cp = mask_key
        blocks = []
        for name in skill_names:
            skill = self.env.skill_named(name)
            enc = np.zeros((n_rows, self.n_sample, self.encoding.dim))
            enc[:, :, self.encoding.slot(name)] = 1.0
            if skill.param_dim:
                lows = np.array([lo for lo, _ in skill.param_bounds])
                highs = np.array([hi for _, hi in skill.param_bounds])
                draws = self.rng.uniform(
                    lows, highs, size=(n_rows, self.n_sample, skill.param_dim)
                )
                base = len(self.encoding.skill_names) + 1
                enc[:, :, base : base + skill.param_dim] = draws
            blocks.append(enc)
        if include_cp:
            cp = np.zeros((n_rows, 1, self.encoding.dim))
            cp[:, :, len(self.encoding.skill_names)] = 1.0
            blocks.append(cp)
        return np.concatenate(blocks, axis=1)

    def _targets(self, idxs: np.ndarray) -> np.ndarray:
        """Double-DQN targets for the given replay rows."""
        rep = self.replay
        B = len(idxs)
        y = rep.rs[idxs].astype(np.float64).copy()
        live = ~rep.terms[idxs]
        if not np.any(live):
            return y
        live_idx = idxs[live]
        boot = np.zeros(len(live_idx))
        mask_ids = rep.masks[live_idx]
        order = np.arange(len(live_idx))
        for mid in sorted(set(int(m) for m in mask_ids)):
            rows = order[mask_ids == mid]
            n = len(rows)
            feats = self.featurizer.apply(rep.xns[live_idx[rows]])
            encs = self._candidate_encodings(rep.mask_key(mid), n)
            C = encs.shape[1]
            X = np.concatenate(
                [np.repeat(feats, C, axis=0), encs.reshape(n * C, -1)], axis=1
            ).astype(self.dtype)
            q_online = forward_batch(self.online, X).reshape(n, C)
            best = q_online.argmax(axis=1)  # selection: online net
            sel = X.reshape(n, C, -1)[np.arange(n), best]
            boot[rows] = forward_batch(self.target, sel)  # evaluation: target net
        y[live] += self.gamma * boot
        return y

    def train_cycle(self) -> str:
        """train_iters minibatch TD steps with polyak target tracking."""
        if len(self.replay) == 0:
            return "empty-replay"
        B = self.batch_size
        for _ in range(self.train_iters):
            idxs = self.rng.integers(0, len(self.replay), size=B)
            y = self._targets(idxs)
            feats = self.featurizer.apply(self.replay.xs[idxs])
            X = np.concatenate([feats, self.replay.acts[idxs]], axis=1).astype(self.dtype)
            pred = forward_batch(self.online, X)
            upstream = ((2.0 / B) * (pred - y)).astype(self.dtype)
            grads = backward_batch(self.online, X, upstream)
            self.online, self.adam = adam_step(
                self.online, grads, self.adam, lr=self.lr
            )
            self.target = polyak(self.target, self.online, self.polyak_tau)
        return "trained"


def epsilon_greedy(
    learner: QLearner,
    state: State,
    mdp: BridgeMDP,
    rng: np.random.Generator,
    epsilon: float | None = None,
):
    """Exploring action choice; pass epsilon=0.0 for greedy evaluation."""
    candidates = candidate_actions(state, mdp, learner.n_sample, rng)
    eps = learner.epsilon() if epsilon is None else epsilon
    if eps > 0.0 and rng.random() < eps:
        return candidates[int(rng.integers(len(candidates)))]
    proj = project_state(state, mdp)
    q = learner.q_values(proj, candidates)
    return candidates[int(np.argmax(q))]


def td_targets(batch: list[TransitionRecord], learner: QLearner) -> np.ndarray:
    """Double-DQN targets for an explicit record batch (test-facing wrapper)."""
    if not batch:
        raise ValueError("td_targets needs a nonempty batch")
    tmp = ReplayBuffer(len(batch), learner.replay.state_dim,
                       learner.replay.action_dim, dtype=learner.dtype)
    for rec in batch:
        tmp.add(rec)
    real, learner.replay = learner.replay, tmp
    try:
        return learner._targets(np.arange(len(batch)))
    finally:
        learner.replay = real
