"""Doorknobs: room-graph navigation with novel knob-locked doors.

Rooms sit on an integer grid; connectivity is grid adjacency over a randomly
grown room set (grown so the induced graph is a tree, which makes every
start-goal path unique and every doored edge unavoidable). The planner knows
Connected rooms but nothing about doors; a closed door no-ops the crossing
move. One low-level action sets the door's knob to 2*pi*u, and the door opens
when the knob lands within 0.1 (wrapped) of the observable target angle.
"""

from __future__ import annotations

import math
from collections import deque

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

KNOB_TOLERANCE = 0.1
TWO_PI = 2.0 * math.pi

ROBOT = ObjectType("robot", ("x", "y"), position_features=("x", "y"))
ROOM = ObjectType("room", ("x", "y"), position_features=("x", "y"))
DOOR = ObjectType(
    "door", ("x", "y", "knob", "target", "open"), position_features=("x", "y")
)

MOVE = ParameterizedSkill("MoveRobot", (ROBOT, ROOM, ROOM))
LOW_LEVEL = ParameterizedSkill(RUN_LOW_LEVEL_ACTION, (), ((0.0, 1.0),))


def _colocated(s: State, a: ObjectRef, b: ObjectRef) -> bool:
    return (
        abs(s.get(a, "x") - s.get(b, "x")) < 0.5
        and abs(s.get(a, "y") - s.get(b, "y")) < 0.5
    )


ROBOT_IN_ROOM = Predicate(
    "RobotInRoom", (ROBOT, ROOM), lambda s, args: _colocated(s, args[0], args[1])
)
CONNECTED = Predicate(
    "Connected",
    (ROOM, ROOM),
    lambda s, a: abs(s.get(a[0], "x") - s.get(a[1], "x"))
    + abs(s.get(a[0], "y") - s.get(a[1], "y"))
    == 1.0,
)

_MOVE_OP = Operator(
    name="MoveRobot",
    parameters=(("?r", ROBOT), ("?a", ROOM), ("?b", ROOM)),
    preconditions=frozenset(
        {LiftedAtom(ROBOT_IN_ROOM, ("?r", "?a")), LiftedAtom(CONNECTED, ("?a", "?b"))}
    ),
    add_effects=frozenset({LiftedAtom(ROBOT_IN_ROOM, ("?r", "?b"))}),
    delete_effects=frozenset({LiftedAtom(ROBOT_IN_ROOM, ("?r", "?a"))}),
    linked_skill=MOVE,
    skill_object_vars=("?r", "?a", "?b"),
)


def _wrapped_diff(a: float, b: float) -> float:
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


def _door_on_edge(state: State, ax, ay, bx, by) -> ObjectRef | None:
    mx, my = (ax + bx) / 2.0, (ay + by) / 2.0
    for door in state.objects_of_type("door"):
        if state.get(door, "x") == mx and state.get(door, "y") == my:
            return door
    return None


def _transition(state: State, action: GroundAction) -> State:
    name = action.skill.name
    if name == "MoveRobot":
        robot, room_a, room_b = action.objects
        if not _colocated(state, robot, room_a):
            return state
        ax, ay = state.get(room_a, "x"), state.get(room_a, "y")
        bx, by = state.get(room_b, "x"), state.get(room_b, "y")
        if abs(ax - bx) + abs(ay - by) != 1.0:
            return state
        door = _door_on_edge(state, ax, ay, bx, by)
        if door is not None and state.get(door, "open") == 0.0:
            return state
        return state.updated({robot: {"x": bx, "y": by}})
    if name == RUN_LOW_LEVEL_ACTION:
        robot = state.objects_of_type("robot")[0]
        rx, ry = state.get(robot, "x"), state.get(robot, "y")
        adjacent = [
            d
            for d in state.objects_of_type("door")
            if state.get(d, "open") == 0.0
            and abs(state.get(d, "x") - rx) + abs(state.get(d, "y") - ry) == 0.5
        ]
        if not adjacent:
            return state
        door = adjacent[0]  # lowest door index
        knob = TWO_PI * action.params[0]
        changes = {"knob": knob}
        if _wrapped_diff(knob, state.get(door, "target")) <= KNOB_TOLERANCE:
            changes["open"] = 1.0
        return state.updated({door: changes})
    raise ValueError(f"doorknobs cannot execute skill {name!r}")


def _neighbors(cell):
    x, y = cell
    return [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]


def _grow_tree_rooms(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Grow a connected room set whose induced grid adjacency is a tree."""
    cells = {(0, 0)}
    while len(cells) < n:
        candidates = sorted(
            {
                nb
                for c in cells
                for nb in _neighbors(c)
                if nb not in cells
                and sum(1 for m in _neighbors(nb) if m in cells) == 1
            }
        )
        if not candidates:
            raise _LayoutRetry()
        cells.add(candidates[int(rng.integers(len(candidates)))])
    return sorted(cells)


def _bfs_paths(cells: list[tuple[int, int]], source) -> dict:
    """Parent map of the BFS tree rooted at source (unique paths on a tree)."""
    cell_set = set(cells)
    parent = {source: None}
    queue = deque([source])
    while queue:
        cur = queue.popleft()
        for nb in _neighbors(cur):
            if nb in cell_set and nb not in parent:
                parent[nb] = cur
                queue.append(nb)
    return parent


def _path(parent: dict, target) -> list:
    out = [target]
    while parent[out[-1]] is not None:
        out.append(parent[out[-1]])
    return list(reversed(out))


def _build_task(
    cells: list[tuple[int, int]],
    start,
    goal,
    door_edges: list[tuple[tuple[int, int], tuple[int, int]]],
    targets: list[float],
    horizon: int,
) -> Task:
    robot = ObjectRef("robby", ROBOT)
    rooms = [ObjectRef(f"room{i}", ROOM) for i in range(len(cells))]
    doors = [ObjectRef(f"door{i}", DOOR) for i in range(len(door_edges))]
    cell_index = {c: i for i, c in enumerate(cells)}
    values = {robot: [float(start[0]), float(start[1])]}
    for c, room in zip(cells, rooms):
        values[room] = [float(c[0]), float(c[1])]
    for d, (a, b), t in zip(doors, door_edges, targets):
        values[d] = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, 0.0, t, 0.0]
    goal_atom = GroundAtom(ROBOT_IN_ROOM, (robot, rooms[cell_index[goal]]))
    return Task(
        objects=tuple([robot] + rooms + doors),
        initial_state=State(values),
        goal=frozenset({goal_atom}),
        horizon=horizon,
    )


DEFAULT_RANGES = {
    "eval_rooms": (4, 25),
    "eval_doors": (2, 5),
    "horizon": 200,
    "target_margin": 0.3,
}


def _sample(split: str, ranges: dict, rng: np.random.Generator) -> Task:
    r = {**DEFAULT_RANGES, **ranges}
    lo_t, hi_t = r["target_margin"], TWO_PI - r["target_margin"]
    if split == "train":
        # "Very simple" training regime: an L of three rooms in a 2x2 box.
        cells = [(0, 0), (1, 0), (1, 1)]
        path = [(0, 0), (1, 0), (1, 1)]
        edge_idx = [int(rng.integers(0, 2))]
        edges = [(path[i], path[i + 1]) for i in edge_idx]
        targets = [float(rng.uniform(lo_t, hi_t))]
        return _build_task(cells, (0, 0), (1, 1), edges, targets, r["horizon"])

    n = int(rng.integers(r["eval_rooms"][0], r["eval_rooms"][1] + 1))
    cells = _grow_tree_rooms(n, rng)
    paths = {c: _bfs_paths(cells, c) for c in cells}
    diameter = max(
        len(_path(paths[a], b)) - 1 for a in cells for b in cells if a <= b
    )
    # Doors go on pairwise room-disjoint path edges: path length >= 2*nd - 1.
    nd_lo, nd_hi = r["eval_doors"]
    nd_hi = min(nd_hi, (diameter + 1) // 2)
    if nd_hi < nd_lo:
        raise _LayoutRetry()
    nd = int(rng.integers(nd_lo, nd_hi + 1))
    eligible = []
    for a in cells:
        for b in cells:
            if a < b and len(_path(paths[a], b)) - 1 >= 2 * nd - 1:
                eligible.append((a, b))
    if not eligible:
        raise _LayoutRetry()
    start, goal = eligible[int(rng.integers(len(eligible)))]
    if rng.integers(2):
        start, goal = goal, start
    path = _path(paths[start], goal)
    n_edges = len(path) - 1
    span_hi = (n_edges - 1) - 2 * (nd - 1)
    qs = np.sort(rng.integers(0, span_hi + 1, size=nd))
    edge_idx = [int(q + 2 * i) for i, q in enumerate(qs)]
    edges = [(path[i], path[i + 1]) for i in edge_idx]
    targets = [float(rng.uniform(lo_t, hi_t)) for _ in range(nd)]
    return _build_task(cells, start, goal, edges, targets, r["horizon"])


def _count_novelties_resolved(before: State, after: State) -> int:
    opened = 0
    for door in before.objects_of_type("door"):
        if before.get(door, "open") == 0.0 and after.get(door, "open") == 1.0:
            opened += 1
    return opened


ENV = EnvSpec(
    name="doorknobs",
    types=(ROBOT, ROOM, DOOR),
    skills=(MOVE, LOW_LEVEL),
    predicates=(ROBOT_IN_ROOM,),
    planner_predicates=(CONNECTED,),
    operators=(_MOVE_OP,),
    interactable_types=(DOOR,),
    static_predicates=(CONNECTED,),
    transition=_transition,
    sampler=_sample,
    novelty_counter=_count_novelties_resolved,
    position_dim=2,
)
