"""Light Switch Door: a row of cells, a light at the end, novel doors between.

The planner models moving and toggling only. Doors are invisible to it: a
closed door silently no-ops the crossing move, and opening one takes two
well-chosen low-level actions (latch into [0.7, 0.9], then push with
u2 >= 0.6 while latched).
"""

from __future__ import annotations

import numpy as np

from ..core import (
    GroundAction,
    GroundAtom,
    ObjectRef,
    ObjectType,
    ParameterizedSkill,
    Predicate,
    State,
    Task,
)
from ..planner import LiftedAtom, Operator
from .base import RUN_LOW_LEVEL_ACTION, EnvSpec, _LayoutRetry

LATCH_LO, LATCH_HI = 0.7, 0.9
PUSH_MIN = 0.6
LIGHT_ON_THRESHOLD = 0.5

ROBOT = ObjectType("robot", ("x",), position_features=("x",))
LIGHT = ObjectType("light", ("x", "level"), position_features=("x",))
DOOR = ObjectType("door", ("x", "latch", "open"), position_features=("x",))
CELL = ObjectType("cell", ("x",), position_features=("x",))

MOVE_LEFT = ParameterizedSkill("MoveLeft", (ROBOT,))
MOVE_RIGHT = ParameterizedSkill("MoveRight", (ROBOT,))
TOGGLE = ParameterizedSkill("ToggleLightSwitch", (ROBOT, LIGHT), ((0.0, 1.0),))
LOW_LEVEL = ParameterizedSkill(RUN_LOW_LEVEL_ACTION, (), ((0.0, 1.0), (0.0, 1.0)))

LIGHT_ON = Predicate(
    "LightOn", (LIGHT,), lambda s, a: s.get(a[0], "level") >= LIGHT_ON_THRESHOLD
)
ROBOT_IN_CELL = Predicate(
    "RobotInCell",
    (ROBOT, CELL),
    lambda s, a: abs(s.get(a[0], "x") - s.get(a[1], "x")) < 0.5,
)
ADJACENT = Predicate(
    "Adjacent",
    (CELL, CELL),
    lambda s, a: s.get(a[1], "x") - s.get(a[0], "x") == 1.0,
)
LIGHT_IN_CELL = Predicate(
    "LightInCell",
    (LIGHT, CELL),
    lambda s, a: abs(s.get(a[0], "x") - s.get(a[1], "x")) < 0.5,
)

_MOVE_RIGHT_OP = Operator(
    name="MoveRight",
    parameters=(("?r", ROBOT), ("?from", CELL), ("?to", CELL)),
    preconditions=frozenset(
        {LiftedAtom(ROBOT_IN_CELL, ("?r", "?from")), LiftedAtom(ADJACENT, ("?from", "?to"))}
    ),
    add_effects=frozenset({LiftedAtom(ROBOT_IN_CELL, ("?r", "?to"))}),
    delete_effects=frozenset({LiftedAtom(ROBOT_IN_CELL, ("?r", "?from"))}),
    linked_skill=MOVE_RIGHT,
    skill_object_vars=("?r",),
)
_MOVE_LEFT_OP = Operator(
    name="MoveLeft",
    parameters=(("?r", ROBOT), ("?from", CELL), ("?to", CELL)),
    preconditions=frozenset(
        {LiftedAtom(ROBOT_IN_CELL, ("?r", "?from")), LiftedAtom(ADJACENT, ("?to", "?from"))}
    ),
    add_effects=frozenset({LiftedAtom(ROBOT_IN_CELL, ("?r", "?to"))}),
    delete_effects=frozenset({LiftedAtom(ROBOT_IN_CELL, ("?r", "?from"))}),
    linked_skill=MOVE_LEFT,
    skill_object_vars=("?r",),
)
_TOGGLE_OP = Operator(
    name="ToggleLightSwitch",
    parameters=(("?r", ROBOT), ("?l", LIGHT), ("?c", CELL)),
    preconditions=frozenset(
        {LiftedAtom(ROBOT_IN_CELL, ("?r", "?c")), LiftedAtom(LIGHT_IN_CELL, ("?l", "?c"))}
    ),
    add_effects=frozenset({LiftedAtom(LIGHT_ON, ("?l",))}),
    delete_effects=frozenset(),
    linked_skill=TOGGLE,
    skill_object_vars=("?r", "?l"),
    parameter_policy=lambda state: (1.0,),
)


def _blocking_door(state: State, boundary_x: float) -> ObjectRef | None:
    for door in state.objects_of_type("door"):
        if state.get(door, "open") == 0.0 and state.get(door, "x") == boundary_x:
            return door
    return None


def _transition(state: State, action: GroundAction) -> State:
    name = action.skill.name
    if name in ("MoveLeft", "MoveRight"):
        robot = action.objects[0]
        rx = state.get(robot, "x")
        nx = rx + 1.0 if name == "MoveRight" else rx - 1.0
        n_cells = len(state.objects_of_type("cell"))
        if nx < 0.0 or nx > n_cells - 1:
            return state
        # A door at x = k guards the boundary between cells k-1 and k.
        if _blocking_door(state, max(rx, nx)) is not None:
            return state
        return state.updated({robot: {"x": nx}})
    if name == "ToggleLightSwitch":
        robot, light = action.objects
        if state.get(robot, "x") != state.get(light, "x"):
            return state
        return state.updated({light: {"level": action.params[0]}})
    if name == RUN_LOW_LEVEL_ACTION:
        robot = state.objects_of_type("robot")[0]
        rx = state.get(robot, "x")
        candidates = [
            d
            for d in state.objects_of_type("door")
            if state.get(d, "open") == 0.0 and state.get(d, "x") in (rx, rx + 1.0)
        ]
        if not candidates:
            return state
        door = candidates[0]  # lowest door index
        u1, u2 = action.params
        latch0 = state.get(door, "latch")
        changes = {}
        if latch0 < LATCH_LO and LATCH_LO <= u1 <= LATCH_HI:
            changes["latch"] = u1
        if LATCH_LO <= latch0 <= LATCH_HI and u2 >= PUSH_MIN:
            changes["open"] = 1.0
        if not changes:
            return state
        return state.updated({door: {**changes}})
    raise ValueError(f"light_switch_door cannot execute skill {name!r}")


def _build_task(n_cells: int, start: int, door_positions: list[int]) -> Task:
    robot = ObjectRef("robby", ROBOT)
    light = ObjectRef("light0", LIGHT)
    cells = [ObjectRef(f"cell{i}", CELL) for i in range(n_cells)]
    doors = [ObjectRef(f"door{i}", DOOR) for i in range(len(door_positions))]
    values = {robot: [float(start)], light: [float(n_cells - 1), 0.0]}
    for i, c in enumerate(cells):
        values[c] = [float(i)]
    for d, p in zip(doors, door_positions):
        values[d] = [float(p), 0.0, 0.0]
    state = State(values)
    goal = frozenset({GroundAtom(LIGHT_ON, (light,))})
    # Optimal step count: walk to the light, two openings per door, one toggle.
    h = (n_cells - 1 - start) + 2 * len(door_positions) + 1
    horizon = max(30, h + 5)
    return Task(
        objects=tuple([robot, light] + cells + doors),
        initial_state=state,
        goal=goal,
        horizon=horizon,
    )


DEFAULT_RANGES = {
    "train_cells": (5, 8),
    "train_doors": (1, 1),
    "eval_cells": (10, 20),
    "eval_doors": (2, 4),
    "eval_start_max": 2,
    "door_gap": 3,
}


def _sample(split: str, ranges: dict, rng: np.random.Generator) -> Task:
    r = {**DEFAULT_RANGES, **ranges}
    gap = r["door_gap"]
    if split == "train":
        n = int(rng.integers(r["train_cells"][0], r["train_cells"][1] + 1))
        nd = int(rng.integers(r["train_doors"][0], r["train_doors"][1] + 1))
        start = 0
    else:
        n = int(rng.integers(r["eval_cells"][0], r["eval_cells"][1] + 1))
        start = int(rng.integers(0, r["eval_start_max"] + 1))
        lo, hi = start + 1, n - 1
        nd_cap = (hi - lo) // gap + 1
        nd_lo, nd_hi = r["eval_doors"]
        nd_hi = min(nd_hi, nd_cap)
        if nd_hi < nd_lo:
            raise _LayoutRetry()
        nd = int(rng.integers(nd_lo, nd_hi + 1))
    if nd == 0:
        return _build_task(n, start, [])
    lo, hi = start + 1, n - 1
    if split == "train" and nd == 1:
        # Keep the single training door off the extremes so exploration has
        # room on both sides of the stuck state.
        return _build_task(n, start, [int(rng.integers(min(2, n - 2), n - 1))])
    span_hi = hi - gap * (nd - 1)
    if span_hi < lo:
        raise _LayoutRetry()
    qs = np.sort(rng.integers(lo, span_hi + 1, size=nd))
    pos = [int(q + gap * i) for i, q in enumerate(qs)]
    return _build_task(n, start, pos)


def _count_novelties_resolved(before: State, after: State) -> int:
    opened = 0
    for door in before.objects_of_type("door"):
        if before.get(door, "open") == 0.0 and after.get(door, "open") == 1.0:
            opened += 1
    return opened


ENV = EnvSpec(
    name="light_switch_door",
    types=(ROBOT, LIGHT, DOOR, CELL),
    skills=(MOVE_LEFT, MOVE_RIGHT, TOGGLE, LOW_LEVEL),
    predicates=(LIGHT_ON,),
    planner_predicates=(ROBOT_IN_CELL, ADJACENT, LIGHT_IN_CELL),
    operators=(_MOVE_LEFT_OP, _MOVE_RIGHT_OP, _TOGGLE_OP),
    interactable_types=(DOOR, LIGHT),
    static_predicates=(ADJACENT, LIGHT_IN_CELL),
    transition=_transition,
    sampler=_sample,
    novelty_counter=_count_novelties_resolved,
    position_dim=1,
)
