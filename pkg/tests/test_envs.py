"""Environment dynamics, samplers, novelties, and solvability oracles."""

import math

import numpy as np
import pytest

from planbridge.core import GroundAction, goal_holds
from planbridge.envs import (
    ENV_NAMES,
    TaskSampler,
    get_env,
    interactable_objects,
    sample_task,
    step,
)
from planbridge.envs import coffee as cf
from planbridge.envs import doorknobs as dk
from planbridge.envs import light_switch_door as lsd


def scripted_lsd(env, task):
    """Independent solution: walk right, run the two-stage door protocol."""
    state = task.initial_state
    robot = state.object_named("robby")
    light = state.object_named("light0")
    n = 0
    while state.get(robot, "x") < state.get(light, "x"):
        nxt = step(env, state, GroundAction(env.skill_named("MoveRight"), (robot,)))
        if nxt == state:
            for params in ((0.8, 0.0), (0.0, 1.0)):
                state = step(
                    env, state,
                    GroundAction(env.skill_named("RunLowLevelAction"), (), params),
                )
                n += 1
        else:
            state = nxt
            n += 1
        assert n < 10 * task.horizon, "scripted solver runaway"
    state = step(
        env, state,
        GroundAction(env.skill_named("ToggleLightSwitch"), (robot, light), (1.0,)),
    )
    return state, n + 1


def scripted_doorknobs(env, task):
    """Independent solution: BFS room path; dial each closed door's target."""
    state = task.initial_state
    robot = state.object_named("robby")
    rooms = state.objects_of_type("room")
    goal_atom = next(iter(task.goal))
    goal_room = goal_atom.args[1]
    coords = {r: (state.get(r, "x"), state.get(r, "y")) for r in rooms}
    by_coord = {v: k for k, v in coords.items()}

    def room_at(x, y):
        return by_coord[(x, y)]

    # BFS over rooms (4-adjacency within the sampled set).
    from collections import deque

    start = room_at(state.get(robot, "x"), state.get(robot, "y"))
    parent = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        cx, cy = coords[cur]
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = by_coord.get((cx + dx, cy + dy))
            if nb is not None and nb not in parent:
                parent[nb] = cur
                queue.append(nb)
    path = [goal_room]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()

    n = 0
    for room_a, room_b in zip(path, path[1:]):
        mid = (
            (coords[room_a][0] + coords[room_b][0]) / 2,
            (coords[room_a][1] + coords[room_b][1]) / 2,
        )
        for door in state.objects_of_type("door"):
            if (
                (state.get(door, "x"), state.get(door, "y")) == mid
                and state.get(door, "open") == 0.0
            ):
                u = state.get(door, "target") / (2 * math.pi)
                state = step(
                    env, state,
                    GroundAction(env.skill_named("RunLowLevelAction"), (), (u,)),
                )
                n += 1
        state = step(
            env, state,
            GroundAction(env.skill_named("MoveRobot"), (robot, room_a, room_b)),
        )
        n += 1
    return state, n


def scripted_coffee(env, task):
    """Independent solution: rotate jug upright, pick, place, turn on, pour."""
    state = task.initial_state
    robot = state.object_named("robby")
    jug = state.object_named("jug0")
    machine = state.object_named("machine0")
    cup = state.object_named("cup0")
    u = -state.get(jug, "rotation") / math.pi
    acts = [
        GroundAction(env.skill_named("RunLowLevelAction"), (), (u,)),
        GroundAction(env.skill_named("PickJug"), (robot, jug)),
        GroundAction(env.skill_named("PlaceJugInMachine"), (robot, jug, machine)),
        GroundAction(env.skill_named("TurnMachineOn"), (robot, jug, machine)),
        GroundAction(env.skill_named("PourCoffee"), (robot, jug, cup), (1.0,)),
    ]
    for a in acts:
        state = step(env, state, a)
    return state, len(acts)


class TestLightSwitchDoorDynamics:
    def setup_method(self):
        self.env = get_env("light_switch_door")
        self.task = lsd._build_task(4, 0, [2])
        self.state = self.task.initial_state
        self.robot = self.state.object_named("robby")

    def test_move_right_free(self):
        nxt = step(self.env, self.state,
                   GroundAction(self.env.skill_named("MoveRight"), (self.robot,)))
        assert nxt.get(self.robot, "x") == 1.0

    def test_move_into_closed_door_is_noop(self):
        mid = step(self.env, self.state,
                   GroundAction(self.env.skill_named("MoveRight"), (self.robot,)))
        blocked = step(self.env, mid,
                       GroundAction(self.env.skill_named("MoveRight"), (self.robot,)))
        assert blocked == mid

    def test_move_left_clamped_at_edge(self):
        nxt = step(self.env, self.state,
                   GroundAction(self.env.skill_named("MoveLeft"), (self.robot,)))
        assert nxt == self.state

    def test_toggle_requires_same_cell(self):
        light = self.state.object_named("light0")
        act = GroundAction(self.env.skill_named("ToggleLightSwitch"),
                           (self.robot, light), (1.0,))
        assert step(self.env, self.state, act) == self.state

    def test_door_protocol_two_stage(self):
        state = step(self.env, self.state,
                     GroundAction(self.env.skill_named("MoveRight"), (self.robot,)))
        door = state.object_named("door0")
        rlla = self.env.skill_named("RunLowLevelAction")
        one = step(self.env, state, GroundAction(rlla, (), (0.8, 1.0)))
        assert one.get(door, "open") == 0.0  # single action never opens
        assert one.get(door, "latch") == 0.8
        two = step(self.env, one, GroundAction(rlla, (), (0.2, 1.0)))
        assert two.get(door, "open") == 1.0

    def test_stage_one_needs_latch_window(self):
        state = step(self.env, self.state,
                     GroundAction(self.env.skill_named("MoveRight"), (self.robot,)))
        rlla = self.env.skill_named("RunLowLevelAction")
        miss = step(self.env, state, GroundAction(rlla, (), (0.5, 1.0)))
        assert miss == state

    def test_stage_two_needs_push(self):
        state = step(self.env, self.state,
                     GroundAction(self.env.skill_named("MoveRight"), (self.robot,)))
        rlla = self.env.skill_named("RunLowLevelAction")
        latched = step(self.env, state, GroundAction(rlla, (), (0.75, 0.0)))
        stuck = step(self.env, latched, GroundAction(rlla, (), (0.0, 0.5)))
        assert stuck == latched

    def test_low_level_needs_adjacency(self):
        rlla = self.env.skill_named("RunLowLevelAction")
        # Robot at 0; the door guards the 1->2 boundary (x = 2): not adjacent.
        assert step(self.env, self.state, GroundAction(rlla, (), (0.8, 1.0))) == self.state

    def test_interactables(self):
        task = lsd._build_task(6, 0, [2, 4])
        objs = {o.name for o in interactable_objects(self.env, task.initial_state)}
        assert objs == {"door0", "door1", "light0"}


class TestCoffeeDynamics:
    def setup_method(self):
        self.env = get_env("coffee")
        self.task = sample_task(self.env, TaskSampler("train", 0))
        self.state = self.task.initial_state
        self.robot = self.state.object_named("robby")
        self.jug = self.state.object_named("jug0")

    def test_pick_rotated_jug_fails(self):
        act = GroundAction(self.env.skill_named("PickJug"), (self.robot, self.jug))
        assert abs(self.state.get(self.jug, "rotation")) > cf.GRASP_TOLERANCE
        assert step(self.env, self.state, act) == self.state

    def test_rotate_then_pick(self):
        u = -self.state.get(self.jug, "rotation") / math.pi
        state = step(self.env, self.state,
                     GroundAction(self.env.skill_named("RunLowLevelAction"), (), (u,)))
        assert abs(state.get(self.jug, "rotation")) <= cf.GRASP_TOLERANCE
        state = step(self.env, state,
                     GroundAction(self.env.skill_named("PickJug"),
                                  (self.robot, self.jug)))
        assert state.get(self.jug, "held") == 1.0

    def test_rotation_noop_while_held(self):
        state, _ = scripted_coffee(self.env, self.task)
        rot = state.get(self.jug, "rotation")
        after = step(self.env, state,
                     GroundAction(self.env.skill_named("RunLowLevelAction"), (), (0.7,)))
        assert after.get(self.jug, "rotation") == rot

    def test_pour_requires_filled(self):
        cup = self.state.object_named("cup0")
        act = GroundAction(self.env.skill_named("PourCoffee"),
                           (self.robot, self.jug, cup), (1.0,))
        assert step(self.env, self.state, act) == self.state

    def test_interactables(self):
        objs = {o.name for o in interactable_objects(self.env, self.state)}
        assert objs == {"jug0", "machine0", "cup0"}


class TestDoorknobsDynamics:
    def setup_method(self):
        self.env = get_env("doorknobs")
        self.task = sample_task(self.env, TaskSampler("train", 1))
        self.state = self.task.initial_state
        self.robot = self.state.object_named("robby")

    def test_move_through_closed_door_noop(self):
        door = self.state.objects_of_type("door")[0]
        mid = (self.state.get(door, "x"), self.state.get(door, "y"))
        rooms = {(self.state.get(r, "x"), self.state.get(r, "y")): r
                 for r in self.state.objects_of_type("room")}
        # The door sits between two adjacent rooms; find them from the midpoint.
        for (ax, ay), room_a in rooms.items():
            for (bx, by), room_b in rooms.items():
                if ((ax + bx) / 2, (ay + by) / 2) == mid:
                    state = self.state.updated(
                        {self.robot: {"x": ax, "y": ay}}
                    )
                    act = GroundAction(self.env.skill_named("MoveRobot"),
                                       (self.robot, room_a, room_b))
                    assert step(self.env, state, act) == state
                    return
        pytest.fail("no doored edge found")

    def test_knob_within_tolerance_opens(self):
        door = self.state.objects_of_type("door")[0]
        u = self.state.get(door, "target") / (2 * math.pi)
        state = step(self.env, self.state,
                     GroundAction(self.env.skill_named("RunLowLevelAction"), (), (u,)))
        if state.get(door, "open") != 1.0:
            # The robot may not start adjacent to the door; walk the path.
            final, _ = scripted_doorknobs(self.env, self.task)
            assert goal_holds(self.task.goal, final)

    def test_knob_outside_tolerance_stays_closed(self):
        door = self.state.objects_of_type("door")[0]
        target = self.state.get(door, "target")
        u = ((target + math.pi) % (2 * math.pi)) / (2 * math.pi)
        state = step(self.env, self.state,
                     GroundAction(self.env.skill_named("RunLowLevelAction"), (), (u,)))
        assert state.get(door, "open") == 0.0


class TestDeterminismAndNoop:
    @pytest.mark.parametrize("name", ENV_NAMES)
    def test_random_action_determinism(self, name):
        env = get_env(name)
        task = sample_task(env, TaskSampler("train", 3))
        state = task.initial_state
        rng = np.random.default_rng(0)
        for _ in range(60):
            skill = env.skills[int(rng.integers(len(env.skills)))]
            objects = []
            feasible = True
            for t in skill.object_signature:
                pool = state.objects_of_type(t.name)
                if not pool:
                    feasible = False
                    break
                objects.append(pool[int(rng.integers(len(pool)))])
            if not feasible:
                continue
            params = tuple(float(rng.uniform(lo, hi)) for lo, hi in skill.param_bounds)
            act = GroundAction(skill, tuple(objects), params)
            first = step(env, state, act)
            second = step(env, state, act)
            assert first == second
            state = first


class TestSamplers:
    def test_lsd_eval_ranges(self):
        env = get_env("light_switch_door")
        sampler = TaskSampler("eval", 0)
        for _ in range(10):
            task = sample_task(env, sampler)
            n_cells = len(task.initial_state.objects_of_type("cell"))
            n_doors = len(task.initial_state.objects_of_type("door"))
            assert 10 <= n_cells <= 20
            assert 2 <= n_doors <= 4

    def test_lsd_train_single_door(self):
        env = get_env("light_switch_door")
        for seed in range(8):
            task = sample_task(env, TaskSampler("train", seed))
            assert len(task.initial_state.objects_of_type("door")) == 1

    def test_lsd_eval_dominates_train(self):
        r = lsd.DEFAULT_RANGES
        assert r["eval_cells"][0] > r["train_cells"][1]
        assert r["eval_doors"][0] > r["train_doors"][1]

    def test_lsd_doors_between_robot_and_light(self):
        env = get_env("light_switch_door")
        sampler = TaskSampler("eval", 7)
        for _ in range(10):
            task = sample_task(env, sampler)
            state = task.initial_state
            rx = state.get(state.object_named("robby"), "x")
            lx = state.get(state.object_named("light0"), "x")
            for door in state.objects_of_type("door"):
                assert rx < state.get(door, "x") <= lx

    def test_lsd_door_spacing(self):
        env = get_env("light_switch_door")
        sampler = TaskSampler("eval", 11)
        for _ in range(10):
            task = sample_task(env, sampler)
            xs = sorted(task.initial_state.get(d, "x")
                        for d in task.initial_state.objects_of_type("door"))
            assert all(b - a >= 3 for a, b in zip(xs, xs[1:]))

    def test_lsd_horizon_rule(self):
        env = get_env("light_switch_door")
        task = sample_task(env, TaskSampler("train", 5))
        state = task.initial_state
        h = int(
            state.get(state.object_named("light0"), "x")
            - state.get(state.object_named("robby"), "x")
            + 2 * len(state.objects_of_type("door"))
            + 1
        )
        assert task.horizon == max(30, h + 5)

    def test_doorknobs_eval_ranges_and_reachability(self):
        env = get_env("doorknobs")
        sampler = TaskSampler("eval", 0)
        for _ in range(8):
            task = sample_task(env, sampler)
            rooms = task.initial_state.objects_of_type("room")
            doors = task.initial_state.objects_of_type("door")
            assert 4 <= len(rooms) <= 25
            assert 2 <= len(doors) <= 5
            assert task.horizon == 200
            final, n = scripted_doorknobs(env, task)
            assert goal_holds(task.goal, final) and n <= task.horizon

    def test_coffee_task_counts(self):
        env = get_env("coffee")
        task = sample_task(env, TaskSampler("train", 4))
        assert task.horizon == 100
        jug = task.initial_state.object_named("jug0")
        assert abs(task.initial_state.get(jug, "rotation")) > cf.GRASP_TOLERANCE

    def test_solvability_within_horizon(self):
        for name, solver in (
            ("light_switch_door", scripted_lsd),
            ("doorknobs", scripted_doorknobs),
            ("coffee", scripted_coffee),
        ):
            env = get_env(name)
            for split in ("train", "eval"):
                sampler = TaskSampler(split, 21)
                for _ in range(4):
                    task = sample_task(env, sampler)
                    final, n = solver(env, task)
                    assert goal_holds(task.goal, final), (name, split)
                    assert n <= task.horizon

    def test_sampler_is_deterministic(self):
        env = get_env("light_switch_door")
        t1 = sample_task(env, TaskSampler("eval", 33))
        t2 = sample_task(env, TaskSampler("eval", 33))
        assert t1.initial_state == t2.initial_state
        assert t1.horizon == t2.horizon
