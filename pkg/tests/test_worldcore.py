"""Core world-model types, abstraction, and distances."""

import numpy as np
import pytest

from planbridge.core import (
    GroundAction,
    GroundAtom,
    ObjectRef,
    ObjectType,
    State,
    Task,
    abstract,
    goal_holds,
    object_distance,
)
from planbridge.envs import get_env
from planbridge.envs import light_switch_door as lsd


def make_state(n_cells=3, robot_x=0, light_level=0.0, doors=()):
    values = {
        ObjectRef("robby", lsd.ROBOT): [float(robot_x)],
        ObjectRef("light0", lsd.LIGHT): [float(n_cells - 1), float(light_level)],
    }
    for i in range(n_cells):
        values[ObjectRef(f"cell{i}", lsd.CELL)] = [float(i)]
    for i, (x, latch, opened) in enumerate(doors):
        values[ObjectRef(f"door{i}", lsd.DOOR)] = [float(x), latch, opened]
    return State(values)


class TestTypes:
    def test_object_type_dims(self):
        assert lsd.DOOR.dim == 3
        assert lsd.DOOR.position_dim == 1

    def test_duplicate_features_rejected(self):
        with pytest.raises(ValueError):
            ObjectType("bad", ("x", "x"))

    def test_positions_must_lead(self):
        with pytest.raises(ValueError):
            ObjectType("bad", ("a", "x"), position_features=("x",))

    def test_state_vector_length_checked(self):
        with pytest.raises(ValueError):
            State({ObjectRef("robby", lsd.ROBOT): [0.0, 1.0]})

    def test_state_is_immutable(self):
        state = make_state()
        with pytest.raises(ValueError):
            state[state.object_named("robby")][0] = 5.0

    def test_ground_action_validates_bounds(self):
        with pytest.raises(ValueError):
            GroundAction(lsd.LOW_LEVEL, (), (1.5, 0.0))

    def test_ground_action_validates_types(self):
        robot = ObjectRef("robby", lsd.ROBOT)
        with pytest.raises(ValueError):
            GroundAction(lsd.TOGGLE, (robot, robot), (1.0,))

    def test_task_goal_must_reference_task_objects(self):
        state = make_state()
        stray = ObjectRef("light9", lsd.LIGHT)
        goal = frozenset({GroundAtom(lsd.LIGHT_ON, (stray,))})
        with pytest.raises(ValueError):
            Task(tuple(state.objects), state, goal, horizon=10)


class TestAbstract:
    def test_light_on_when_bright(self):
        state = make_state(light_level=0.9)
        atoms = abstract(state, [lsd.LIGHT_ON])
        assert {str(a) for a in atoms} == {"LightOn(light0)"}

    def test_empty_predicate_set(self):
        assert abstract(make_state(), []) == frozenset()

    def test_robot_cell_membership(self):
        state = make_state(n_cells=3, robot_x=0)
        atoms = {str(a) for a in abstract(state, [lsd.ROBOT_IN_CELL])}
        assert "RobotInCell(robby,cell0)" in atoms
        assert "RobotInCell(robby,cell1)" not in atoms

    def test_monotone_over_predicate_union(self):
        env = get_env("light_switch_door")
        rng = np.random.default_rng(0)
        preds = list(env.abstraction_predicates)
        for _ in range(20):
            state = make_state(
                n_cells=4,
                robot_x=int(rng.integers(0, 4)),
                light_level=float(rng.random()),
                doors=[(int(rng.integers(1, 4)), float(rng.random()),
                        float(rng.integers(0, 2)))],
            )
            p1, p2 = preds[:2], preds[2:]
            assert abstract(state, p1) | abstract(state, p2) == abstract(state, preds)

    def test_deterministic(self):
        env = get_env("light_switch_door")
        state = make_state(doors=[(1, 0.0, 0.0)])
        assert abstract(state, env.abstraction_predicates) == abstract(
            state, env.abstraction_predicates
        )


class TestGoalHolds:
    def test_empty_goal(self):
        assert goal_holds(frozenset(), make_state())

    def test_light_off(self):
        state = make_state(light_level=0.0)
        goal = {GroundAtom(lsd.LIGHT_ON, (state.object_named("light0"),))}
        assert not goal_holds(goal, state)

    def test_light_on(self):
        state = make_state(light_level=0.9)
        goal = {GroundAtom(lsd.LIGHT_ON, (state.object_named("light0"),))}
        assert goal_holds(goal, state)

    def test_matches_abstract_subset(self):
        env = get_env("light_switch_door")
        rng = np.random.default_rng(1)
        for _ in range(20):
            state = make_state(light_level=float(rng.random()))
            goal = {GroundAtom(lsd.LIGHT_ON, (state.object_named("light0"),))}
            assert goal_holds(goal, state) == (
                frozenset(goal) <= abstract(state, env.abstraction_predicates)
            )


class TestObjectDistance:
    def test_one_dimensional(self):
        state = make_state(n_cells=3, robot_x=1, doors=[(2, 0.0, 0.0)])
        robot = state.object_named("robby")
        door = state.object_named("door0")
        assert object_distance(state, robot, door) == 1.0

    def test_identical_positions(self):
        state = make_state(n_cells=3, robot_x=2)
        robot = state.object_named("robby")
        light = state.object_named("light0")
        assert object_distance(state, robot, light) == 0.0

    def test_three_four_five(self):
        from planbridge.envs import doorknobs as dk

        robot = ObjectRef("robby", dk.ROBOT)
        door = ObjectRef("door0", dk.DOOR)
        state = State({robot: [0.0, 0.0], door: [3.0, 4.0, 0.0, 1.0, 0.0]})
        assert object_distance(state, robot, door) == 5.0

    def test_requires_position_features(self):
        plain = ObjectType("blob", ("a",))
        obj = ObjectRef("b0", plain)
        robot = ObjectRef("robby", lsd.ROBOT)
        state = State({obj: [1.0], robot: [0.0]})
        with pytest.raises(ValueError):
            object_distance(state, robot, obj)

    def test_symmetry_and_triangle(self):
        rng = np.random.default_rng(2)
        from planbridge.envs import doorknobs as dk

        for _ in range(50):
            pts = rng.uniform(-5, 5, size=(3, 2))
            objs = [ObjectRef(f"room{i}", dk.ROOM) for i in range(3)]
            state = State({o: p for o, p in zip(objs, pts)})
            a, b, c = objs
            assert object_distance(state, a, b) == object_distance(state, b, a)
            assert (
                object_distance(state, a, b)
                <= object_distance(state, a, c) + object_distance(state, c, b) + 1e-12
            )


class TestSerialization:
    def test_state_json_round_shape(self):
        state = make_state(n_cells=2, doors=[(1, 0.0, 0.0)])
        payload = state.to_json()
        assert payload["robby"] == [0.0]
        assert payload["door0"] == [1.0, 0.0, 0.0]

    def test_task_json(self):
        env = get_env("light_switch_door")
        from planbridge.envs import TaskSampler, sample_task

        task = sample_task(env, TaskSampler("train", 0))
        payload = task.to_json()
        assert payload["horizon"] == task.horizon
        assert payload["goal"] == ["LightOn(light0)"]
        assert payload["objects"]["robby"] == "robot"

    def test_atom_string_form(self):
        state = make_state()
        atom = GroundAtom(lsd.LIGHT_ON, (state.object_named("light0"),))
        assert str(atom) == "LightOn(light0)"
