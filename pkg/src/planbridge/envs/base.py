"""Shared environment machinery: specs, stepping, task sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import (
    GroundAction,
    ObjectRef,
    ObjectType,
    ParameterizedSkill,
    Predicate,
    State,
    Task,
)
from ..planner import Operator

RUN_LOW_LEVEL_ACTION = "RunLowLevelAction"


class SamplerError(RuntimeError):
    """Raised when a task sampler cannot produce a solvable layout."""


class _LayoutRetry(Exception):
    """Internal: a sampled layout violates its structural constraints."""


@dataclass(frozen=True)
class EnvSpec:
    """Everything an environment exposes: types, skills, predicates, dynamics.

    ``transition`` is a pure function; ill-applicable actions return the input
    state unchanged, which is what the plan monitor's stuck check keys on.
    """

    name: str
    types: tuple[ObjectType, ...]
    skills: tuple[ParameterizedSkill, ...]
    predicates: tuple[Predicate, ...]
    planner_predicates: tuple[Predicate, ...]
    operators: tuple[Operator, ...]
    interactable_types: tuple[ObjectType, ...]
    static_predicates: tuple[Predicate, ...]
    transition: Callable[[State, GroundAction], State] = field(compare=False)
    sampler: Callable[[str, dict, np.random.Generator], Task] = field(compare=False)
    novelty_counter: Callable[[State, State], int] = field(compare=False)
    robot_type_name: str = "robot"
    position_dim: int = 1

    def __post_init__(self):
        rlla = [s for s in self.skills if s.name == RUN_LOW_LEVEL_ACTION]
        if len(rlla) != 1 or rlla[0].object_signature != ():
            raise ValueError(
                f"{self.name}: needs exactly one object-free {RUN_LOW_LEVEL_ACTION}"
            )

    @property
    def abstraction_predicates(self) -> tuple[Predicate, ...]:
        return self.predicates + self.planner_predicates

    @property
    def position_feature_map(self) -> dict[str, tuple[int, ...]]:
        return {
            t.name: tuple(range(t.position_dim))
            for t in self.types
            if t.position_dim > 0
        }

    def skill_named(self, name: str) -> ParameterizedSkill:
        for s in self.skills:
            if s.name == name:
                return s
        raise KeyError(name)

    def type_named(self, name: str) -> ObjectType:
        for t in self.types:
            if t.name == name:
                return t
        raise KeyError(name)

    def robot_object(self, state: State) -> ObjectRef:
        robots = state.objects_of_type(self.robot_type_name)
        if len(robots) != 1:
            raise ValueError(f"{self.name}: expected exactly one robot object")
        return robots[0]


@dataclass
class TaskSampler:
    """Seeded task source for one split; consecutive samples form a sequence."""

    split: str
    rng_seed: int
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in ("train", "eval"):
            raise ValueError(f"split must be train or eval, got {self.split!r}")
        self._rng = np.random.default_rng(np.random.SeedSequence(self.rng_seed))

    @property
    def rng(self) -> np.random.Generator:
        return self._rng


def sample_task(env: EnvSpec, sampler: TaskSampler, retry_cap: int = 25) -> Task:
    """Draw the next task from the sampler, retrying rejected layouts."""
    for _ in range(retry_cap):
        try:
            return env.sampler(sampler.split, sampler.ranges, sampler.rng)
        except _LayoutRetry:
            continue
    raise SamplerError(f"{env.name}: no solvable layout in {retry_cap} attempts")


def step(env: EnvSpec, state: State, action: GroundAction) -> State:
    """Deterministic environment transition; failures are silent no-ops."""
    if action.skill.name not in {s.name for s in env.skills}:
        raise ValueError(f"unknown skill {action.skill.name!r} for env {env.name}")
    return env.transition(state, action)


def interactable_objects(env: EnvSpec, state: State) -> set[ObjectRef]:
    """All objects whose type is declared interactable."""
    names = {t.name for t in env.interactable_types}
    return {o for o in state.objects if o.type.name in names}
