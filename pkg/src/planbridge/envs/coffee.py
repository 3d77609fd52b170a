"""Coffee: pick a jug, machine-fill it, pour into a cup.

The novelty is the jug's initial rotation: grasping only works within 0.1 rad
of upright, and the planner has no rotation skill. The low-level action spins
the jug by u*pi while it is not held.
"""

from __future__ import annotations

import math

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
from .base import RUN_LOW_LEVEL_ACTION, EnvSpec

GRASP_TOLERANCE = 0.1
CUP_FILLED_THRESHOLD = 0.5

ROBOT = ObjectType("robot", ("x",), position_features=("x",))
JUG = ObjectType(
    "jug", ("x", "rotation", "held", "in_machine", "filled"), position_features=("x",)
)
MACHINE = ObjectType("machine", ("x", "on"), position_features=("x",))
CUP = ObjectType("cup", ("x", "fill"), position_features=("x",))

PICK = ParameterizedSkill("PickJug", (ROBOT, JUG))
PLACE = ParameterizedSkill("PlaceJugInMachine", (ROBOT, JUG, MACHINE))
TURN_ON = ParameterizedSkill("TurnMachineOn", (ROBOT, JUG, MACHINE))
POUR = ParameterizedSkill("PourCoffee", (ROBOT, JUG, CUP), ((0.0, 1.0),))
LOW_LEVEL = ParameterizedSkill(RUN_LOW_LEVEL_ACTION, (), ((-1.0, 1.0),))

CUP_FILLED = Predicate(
    "CupFilled", (CUP,), lambda s, a: s.get(a[0], "fill") >= CUP_FILLED_THRESHOLD
)
HOLDING = Predicate(
    "Holding", (ROBOT, JUG), lambda s, a: s.get(a[1], "held") == 1.0
)
JUG_IN_MACHINE = Predicate(
    "JugInMachine", (JUG, MACHINE), lambda s, a: s.get(a[0], "in_machine") == 1.0
)
MACHINE_ON = Predicate("MachineOn", (MACHINE,), lambda s, a: s.get(a[0], "on") == 1.0)
JUG_FILLED = Predicate("JugFilled", (JUG,), lambda s, a: s.get(a[0], "filled") == 1.0)

_PICK_OP = Operator(
    name="PickJug",
    parameters=(("?r", ROBOT), ("?j", JUG)),
    preconditions=frozenset(),
    add_effects=frozenset({LiftedAtom(HOLDING, ("?r", "?j"))}),
    delete_effects=frozenset(),
    linked_skill=PICK,
    skill_object_vars=("?r", "?j"),
)
_PLACE_OP = Operator(
    name="PlaceJugInMachine",
    parameters=(("?r", ROBOT), ("?j", JUG), ("?m", MACHINE)),
    preconditions=frozenset({LiftedAtom(HOLDING, ("?r", "?j"))}),
    add_effects=frozenset({LiftedAtom(JUG_IN_MACHINE, ("?j", "?m"))}),
    delete_effects=frozenset(),
    linked_skill=PLACE,
    skill_object_vars=("?r", "?j", "?m"),
)
_TURN_ON_OP = Operator(
    name="TurnMachineOn",
    parameters=(("?r", ROBOT), ("?j", JUG), ("?m", MACHINE)),
    preconditions=frozenset({LiftedAtom(JUG_IN_MACHINE, ("?j", "?m"))}),
    add_effects=frozenset(
        {LiftedAtom(MACHINE_ON, ("?m",)), LiftedAtom(JUG_FILLED, ("?j",))}
    ),
    delete_effects=frozenset(),
    linked_skill=TURN_ON,
    skill_object_vars=("?r", "?j", "?m"),
)
_POUR_OP = Operator(
    name="PourCoffee",
    parameters=(("?r", ROBOT), ("?j", JUG), ("?c", CUP)),
    preconditions=frozenset(
        {LiftedAtom(HOLDING, ("?r", "?j")), LiftedAtom(JUG_FILLED, ("?j",))}
    ),
    add_effects=frozenset({LiftedAtom(CUP_FILLED, ("?c",))}),
    delete_effects=frozenset(),
    linked_skill=POUR,
    skill_object_vars=("?r", "?j", "?c"),
    parameter_policy=lambda state: (1.0,),
)


def _transition(state: State, action: GroundAction) -> State:
    name = action.skill.name
    if name == "PickJug":
        jug = action.objects[1]
        if (
            abs(state.get(jug, "rotation")) <= GRASP_TOLERANCE
            and state.get(jug, "in_machine") == 0.0
            and state.get(jug, "held") == 0.0
        ):
            return state.updated({jug: {"held": 1.0}})
        return state
    if name == "PlaceJugInMachine":
        jug = action.objects[1]
        # The robot keeps hold of the jug while it sits in the machine.
        if state.get(jug, "held") == 1.0 and state.get(jug, "in_machine") == 0.0:
            return state.updated({jug: {"in_machine": 1.0}})
        return state
    if name == "TurnMachineOn":
        _, jug, machine = action.objects
        if state.get(jug, "in_machine") == 1.0:
            return state.updated({machine: {"on": 1.0}, jug: {"filled": 1.0}})
        return state
    if name == "PourCoffee":
        _, jug, cup = action.objects
        if state.get(jug, "held") == 1.0 and state.get(jug, "filled") == 1.0:
            return state.updated({cup: {"fill": action.params[0]}})
        return state
    if name == RUN_LOW_LEVEL_ACTION:
        jugs = [j for j in state.objects_of_type("jug") if state.get(j, "held") == 0.0]
        if not jugs:
            return state
        jug = jugs[0]
        rot = state.get(jug, "rotation") + action.params[0] * math.pi
        rot = min(max(rot, -math.pi), math.pi)
        return state.updated({jug: {"rotation": rot}})
    raise ValueError(f"coffee cannot execute skill {name!r}")


DEFAULT_RANGES = {"rotation_abs": (0.5, 2.8), "horizon": 100}


def _sample(split: str, ranges: dict, rng: np.random.Generator) -> Task:
    r = {**DEFAULT_RANGES, **ranges}
    robot = ObjectRef("robby", ROBOT)
    jug = ObjectRef("jug0", JUG)
    machine = ObjectRef("machine0", MACHINE)
    cup = ObjectRef("cup0", CUP)
    rot = float(rng.uniform(*r["rotation_abs"]))
    if rng.integers(2):
        rot = -rot
    state = State(
        {
            robot: [0.0],
            jug: [1.0, rot, 0.0, 0.0, 0.0],
            machine: [2.0, 0.0],
            cup: [3.0, 0.0],
        }
    )
    goal = frozenset({GroundAtom(CUP_FILLED, (cup,))})
    return Task((robot, jug, machine, cup), state, goal, r["horizon"])


def _count_novelties_resolved(before: State, after: State) -> int:
    fixed = 0
    for jug in before.objects_of_type("jug"):
        was_off = abs(before.get(jug, "rotation")) > GRASP_TOLERANCE
        now_ok = (
            abs(after.get(jug, "rotation")) <= GRASP_TOLERANCE
            or after.get(jug, "held") == 1.0
        )
        if was_off and now_ok:
            fixed += 1
    return fixed


ENV = EnvSpec(
    name="coffee",
    types=(ROBOT, JUG, MACHINE, CUP),
    skills=(PICK, PLACE, TURN_ON, POUR, LOW_LEVEL),
    predicates=(CUP_FILLED,),
    planner_predicates=(HOLDING, JUG_IN_MACHINE, MACHINE_ON, JUG_FILLED),
    operators=(_PICK_OP, _PLACE_OP, _TURN_ON_OP, _POUR_OP),
    interactable_types=(JUG, MACHINE, CUP),
    static_predicates=(),
    transition=_transition,
    sampler=_sample,
    novelty_counter=_count_novelties_resolved,
    position_dim=1,
)
