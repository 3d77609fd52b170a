"""Built-in invariant battery for the selftest CLI command.

Each check mirrors one of the module property suites. Oracles here (BFS
optimal plans, scripted door/knob/jug solutions) are written independently of
the planner's A* so the two routes cross-check each other.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from . import nets
from .bridge import (
    CALL_PLANNER,
    ActionEncoding,
    EpsilonSchedule,
    Featurizer,
    QLearner,
    ReplayBuffer,
    TransitionRecord,
    candidate_actions,
    make_bridge_mdp,
    project_state,
    select_focus_object,
)
from .core import GroundAction, State, abstract, goal_holds, object_distance
from .envs import TaskSampler, get_env, sample_task, step
from .envs import light_switch_door as lsd
from .harness import RunConfig, aggregate_seeds, smooth_reward
from .metapolicy import TRAIN, EVAL, solve_task
from .planner import ground, hmax, lmcut, astar_plan, make_plan_policy, plan_for_task


class CheckFailure(AssertionError):
    pass


def _check(cond, msg):
    if not cond:
        raise CheckFailure(msg)


# --------------------------------------------------------------------- oracles


def bfs_optimal_length(init_atoms, goal, ops) -> float:
    """Breadth-first optimal plan length over the ground transition system."""
    init = frozenset(init_atoms)
    goal = frozenset(goal)
    if goal <= init:
        return 0
    seen = {init}
    frontier = deque([(init, 0)])
    while frontier:
        atoms, depth = frontier.popleft()
        for op in ops:
            if not op.preconditions <= atoms:
                continue
            nxt = frozenset((atoms - op.delete_effects) | op.add_effects)
            if goal <= nxt:
                return depth + 1
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, depth + 1))
    return math.inf


def scripted_lsd_solution(env, task):
    """Walk right, opening each door with the two-stage protocol; toggle."""
    state = task.initial_state
    robot = state.object_named("robby")
    light = state.object_named("light0")
    actions = []
    guard = 0
    while state.get(robot, "x") < state.get(light, "x"):
        nxt = step(env, state, GroundAction(env.skill_named("MoveRight"), (robot,)))
        if nxt == state:
            for params in ((0.8, 0.0), (0.0, 1.0)):
                a = GroundAction(env.skill_named("RunLowLevelAction"), (), params)
                state = step(env, state, a)
                actions.append(a)
        else:
            state = nxt
            actions.append(GroundAction(env.skill_named("MoveRight"), (robot,)))
        guard += 1
        if guard > 10 * task.horizon:
            raise CheckFailure("scripted LSD solution is not terminating")
    a = GroundAction(env.skill_named("ToggleLightSwitch"), (robot, light), (1.0,))
    state = step(env, state, a)
    actions.append(a)
    return state, actions


def _random_lsd_state(rng, n_cells=5, n_doors=1):
    values = {}
    robot = lsd.ROBOT
    values[_obj("robby", robot)] = [float(rng.integers(0, n_cells))]
    values[_obj("light0", lsd.LIGHT)] = [float(n_cells - 1), float(rng.random())]
    for i in range(n_doors):
        values[_obj(f"door{i}", lsd.DOOR)] = [
            float(rng.integers(1, n_cells)),
            float(rng.random()),
            float(rng.integers(0, 2)),
        ]
    for i in range(n_cells):
        values[_obj(f"cell{i}", lsd.CELL)] = [float(i)]
    return State(values)


def _obj(name, type_):
    from .core import ObjectRef

    return ObjectRef(name, type_)


# ---------------------------------------------------------------- the checks


def check_worldcore():
    rng = np.random.default_rng(11)
    env = get_env("light_switch_door")
    for _ in range(25):
        state = _random_lsd_state(rng)
        preds = list(env.abstraction_predicates)
        half1, half2 = preds[:2], preds[2:]
        union = abstract(state, preds)
        _check(
            union == abstract(state, half1) | abstract(state, half2),
            "abstract is not monotone over predicate union",
        )
        _check(union == abstract(state, preds), "abstract is not deterministic")
        goal = frozenset(a for a in union if a.predicate.name == "LightOn")
        _check(goal_holds(goal, state) == (goal <= union), "goal_holds mismatch")
        objs = [o for o in state.objects if o.type.position_dim]
        trio = [objs[i] for i in rng.choice(len(objs), size=3, replace=False)]
        a, b, c = trio
        dab = object_distance(state, a, b)
        _check(dab == object_distance(state, b, a), "distance asymmetric")
        _check(
            dab <= object_distance(state, a, c) + object_distance(state, c, b) + 1e-12,
            "triangle inequality violated",
        )


def check_envs():
    for name in ("light_switch_door", "doorknobs", "coffee"):
        env = get_env(name)
        sampler = TaskSampler("train", 5)
        task = sample_task(env, sampler)
        state = task.initial_state
        rng = np.random.default_rng(7)
        skills = list(env.skills)
        for _ in range(40):
            skill = skills[int(rng.integers(len(skills)))]
            objects = []
            ok = True
            for t in skill.object_signature:
                pool = state.objects_of_type(t.name)
                if not pool:
                    ok = False
                    break
                objects.append(pool[int(rng.integers(len(pool)))])
            if not ok:
                continue
            params = tuple(
                float(rng.uniform(lo, hi)) for lo, hi in skill.param_bounds
            )
            action = GroundAction(skill, tuple(objects), params)
            out1 = step(env, state, action)
            out2 = step(env, state, action)
            _check(out1 == out2, f"{name}: step not deterministic")
            state = out1
    # Door protocol: two well-chosen actions open; one never does.
    env = get_env("light_switch_door")
    task = sample_task(env, TaskSampler("train", 3))
    final, _ = scripted_lsd_solution(env, task)
    _check(goal_holds(task.goal, final), "scripted LSD solution fails")
    state = task.initial_state
    robot = state.object_named("robby")
    door = state.objects_of_type("door")[0]
    while abs(state.get(robot, "x") - state.get(door, "x")) > 1.0:
        state = step(env, state, GroundAction(env.skill_named("MoveRight"), (robot,)))
    rlla = env.skill_named("RunLowLevelAction")
    one_shot = step(env, state, GroundAction(rlla, (), (0.8, 1.0)))
    _check(one_shot.get(door, "open") == 0.0, "single low-level action opened a door")
    two_shot = step(env, one_shot, GroundAction(rlla, (), (0.1, 1.0)))
    _check(two_shot.get(door, "open") == 1.0, "door protocol failed to open")


def check_planner(instances: int = 100):
    rng = np.random.default_rng(23)
    env = get_env("light_switch_door")
    for _ in range(instances):
        n = int(rng.integers(3, 7))
        start = int(rng.integers(0, n))
        task = lsd._build_task(n, start, [])
        atoms = abstract(task.initial_state, env.abstraction_predicates)
        ops = ground(env.operators, task.initial_state.objects, atoms,
                     env.static_predicates)
        h_star = bfs_optimal_length(atoms, task.goal, ops)
        h_m = hmax(atoms, task.goal, ops)
        h_l = lmcut(atoms, task.goal, ops)
        _check(0 <= h_m <= h_l <= h_star, "heuristic ordering broken")
        skeleton = astar_plan(atoms, task.goal, ops)
        _check(skeleton is not None and len(skeleton) == h_star,
               "A* plan is not optimal")
        # Skeleton chaining by preconditions and effects.
        cur = atoms
        for op in skeleton:
            _check(op.preconditions <= cur, "skeleton chaining broken")
            cur = frozenset((cur - op.delete_effects) | op.add_effects)
        # Stuck soundness: no false stucks door-free.
        policy = make_plan_policy(skeleton, env)
        x = task.initial_state
        while policy.status == "active":
            x = step(env, x, policy.next_action(x))
            _check(policy.observe(x) == "advance", "false stuck on door-free task")
        _check(goal_holds(task.goal, x), "door-free plan missed the goal")


def check_stuck_detection(instances: int = 100):
    env = get_env("light_switch_door")
    sampler = TaskSampler("eval", 91)
    for _ in range(instances):
        task = sample_task(env, sampler)
        first_door = min(
            task.initial_state.get(d, "x")
            for d in task.initial_state.objects_of_type("door")
        )
        skeleton = plan_for_task(env, task.initial_state, task.goal)
        policy = make_plan_policy(skeleton, env)
        x = task.initial_state
        robot = x.object_named("robby")
        moved = 0
        while policy.status == "active":
            x = step(env, x, policy.next_action(x))
            if policy.observe(x) == "stuck":
                break
            moved += 1
        _check(policy.status == "stuck", "doored task did not stick")
        _check(
            x.get(robot, "x") == first_door - 1.0,
            "stuck not at the first blocked move",
        )


def check_neural():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(2, 6))
        params = nets.init_mlp(dim, [5, 4], rng)
        x = rng.normal(size=dim)
        grads = nets.backward(params, x, 1.0)
        eps = 1e-5
        for target_list, grad_list in ((params.weights, grads.weights),
                                       (params.biases, grads.biases)):
            for arr, g in zip(target_list, grad_list):
                flat = arr.ravel()
                it = rng.choice(flat.size, size=min(6, flat.size), replace=False)
                for j in it:
                    old = flat[j]
                    flat[j] = old + eps
                    up = nets.forward(params, x)
                    flat[j] = old - eps
                    down = nets.forward(params, x)
                    flat[j] = old
                    fd = (up - down) / (2 * eps)
                    an = g.ravel()[j]
                    rel = abs(fd - an) / max(abs(fd), abs(an), 1.0)
                    worst = max(worst, rel)
    _check(worst <= 1e-4, f"gradient check failed (worst rel err {worst:.2e})")
    # Polyak contraction and schedule exactness.
    a = nets.MLPParams([np.zeros((1, 1))], [np.zeros(1)])
    b = nets.MLPParams([np.ones((1, 1))], [np.ones(1)])
    mixed = nets.polyak(a, b, 0.0025)
    _check(float(mixed.weights[0][0, 0]) == 0.0025, "polyak arithmetic wrong")
    sched = EpsilonSchedule(1.0, 3.8e-5, 0.05)
    for t in (0, 1, 10_000, 40_000):
        _check(sched.value(t) == max(0.05, 1.0 - 3.8e-5 * t), "epsilon schedule off")


def check_bridge():
    env = get_env("light_switch_door")
    task = sample_task(env, TaskSampler("train", 13))
    state = task.initial_state
    mdp = make_bridge_mdp(state, env, task, 0)
    rng = np.random.default_rng(0)
    cands = candidate_actions(state, mdp, 10, rng)
    _check(sum(1 for c in cands if c is CALL_PLANNER) == 1,
           "CallPlanner not exactly once")
    for c in cands:
        if c is CALL_PLANNER:
            continue
        for p, (lo, hi) in zip(c.params, c.skill.param_bounds):
            _check(lo <= p <= hi, "candidate parameter out of bounds")
    # Projection locality: far door's features never appear.
    eval_task = sample_task(env, TaskSampler("eval", 17))
    stuck = eval_task.initial_state
    mdp2 = make_bridge_mdp(stuck, env, eval_task, 0)
    far = sorted(
        (d for d in stuck.objects_of_type("door") if d not in mdp2.focus_objects),
        key=lambda d: d.name,
    )
    _check(far, "expected a non-focus door in an eval task")
    perturbed = stuck.updated({far[0]: {"latch": 0.55}})
    _check(
        np.array_equal(project_state(stuck, mdp2), project_state(perturbed, mdp2)),
        "projection not local to focus objects",
    )
    # Two-action sanity MDP: Q must converge to (1, 0).
    enc = ActionEncoding(("a", "b"), 0)
    feat = Featurizer(1, 0, 0, ())
    learner = QLearner(1, enc, feat, env, np.random.default_rng(5),
                       train_iters=4000, batch_size=16, replay_capacity=100)
    x = np.zeros(1)
    e_a = np.zeros(enc.dim); e_a[0] = 1.0
    e_b = np.zeros(enc.dim); e_b[1] = 1.0
    learner.record(TransitionRecord(x, e_a, 1.0, x, True))
    learner.record(TransitionRecord(x, e_b, 0.0, x, True))
    learner.train_cycle()
    q_a = float(nets.forward_batch(learner.online,
                np.concatenate([x, e_a])[None, :].astype(np.float32))[0])
    q_b = float(nets.forward_batch(learner.online,
                np.concatenate([x, e_b])[None, :].astype(np.float32))[0])
    _check(abs(q_a - 1.0) <= 1e-2 and abs(q_b) <= 1e-2,
           f"sanity MDP Q=({q_a:.3f},{q_b:.3f}) not (1,0)")


def check_metapolicy():
    env = get_env("light_switch_door")
    task = lsd._build_task(6, 0, [3])

    class ScriptedBridge:
        uses_planner = True
        learner = None
        learns = False

        def make_mdp(self, state, env_, task_, steps_used):
            return make_bridge_mdp(state, env_, task_, steps_used)

        def act(self, state, mdp, rng, mode):
            focus = mdp.focus_objects[1]
            if state.get(focus, "open") == 1.0:
                return CALL_PLANNER
            skill = env.skill_named("RunLowLevelAction")
            if state.get(focus, "latch") < 0.7:
                return GroundAction(skill, (), (0.8, 0.0))
            return GroundAction(skill, (), (0.0, 1.0))

    rec = solve_task(env, task, None, ScriptedBridge(), EVAL, rng=None)
    _check(rec.success and rec.alternations == 1,
           f"scripted bridge: success={rec.success} alternations={rec.alternations}")
    _check(rec.env_steps <= task.horizon, "horizon discipline violated")
    seg_steps = sum(s["steps"] for s in rec.segments)
    _check(seg_steps == rec.env_steps, "segments do not partition the steps")


def check_harness():
    _check(smooth_reward([1.0] * 10) == [1.0] * 10, "smooth_reward constant broken")
    series = [0.0] * 25 + [1.0] * 25
    sm = smooth_reward(series)
    _check(sm[49] == 1.0 and abs(sm[25] - 1 / 25) < 1e-12
           and abs(sm[26] - 2 / 25) < 1e-12, "smooth window arithmetic")
    cfg = dict(env="light_switch_door", approach="ours", cycles=4)
    from .harness import CycleRecord, RunRecord

    def fake(seed, evals):
        cycles = [CycleRecord(i, 0.0, evals[i], 10 * i, 1.0) for i in range(4)]
        return RunRecord(RunConfig(seed=seed, **cfg), cycles, [], None)

    rows = aggregate_seeds([fake(0, [0, 0, 0, 0]), fake(1, [1, 1, 1, 1])])
    _check(rows[0]["mean_smooth_eval"] == 0.5, "aggregate mean wrong")
    _check(abs(rows[0]["var_smooth_eval"] - 0.5) < 1e-12, "sample variance wrong")
    rows1 = aggregate_seeds([fake(0, [0, 0, 0, 0])])
    _check(rows1[0]["var_smooth_eval"] == 0.0, "single-record variance must be 0")


ALL_CHECKS = (
    ("worldcore", check_worldcore),
    ("envs", check_envs),
    ("planner", check_planner),
    ("stuck_detection", check_stuck_detection),
    ("neural", check_neural),
    ("bridge", check_bridge),
    ("metapolicy", check_metapolicy),
    ("harness", check_harness),
)


def run_selftest(verbose: bool = True) -> bool:
    ok = True
    for name, fn in ALL_CHECKS:
        try:
            fn()
            if verbose:
                print(f"selftest {name}: PASS")
        except Exception as exc:  # report every failure, keep going
            ok = False
            if verbose:
                print(f"selftest {name}: FAIL ({exc})")
    return ok
