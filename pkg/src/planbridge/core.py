"""Object-oriented world model: typed objects, states, predicates, skills, tasks.

Everything here is immutable after construction so environments, the planner,
and the learner can share values freely across runs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ObjectType:
    """A named type with an ordered tuple of real-valued features.

    Positional features (if any) must be the leading features; environments
    rely on this when computing distances and relative encodings.
    """

    name: str
    feature_names: tuple[str, ...]
    position_features: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError(f"duplicate feature names in type {self.name!r}")
        k = len(self.position_features)
        if self.feature_names[:k] != self.position_features:
            raise ValueError(
                f"position features of {self.name!r} must lead the feature tuple"
            )

    @property
    def dim(self) -> int:
        return len(self.feature_names)

    @property
    def position_dim(self) -> int:
        return len(self.position_features)

    def feature_index(self, feature: str) -> int:
        return self.feature_names.index(feature)


@dataclass(frozen=True)
class ObjectRef:
    """A named instance of an ObjectType."""

    name: str
    type: ObjectType

    def __repr__(self):
        return f"{self.name}:{self.type.name}"


def _sort_key(obj: ObjectRef) -> tuple[str, str]:
    return (obj.type.name, obj.name)


class State:
    """Immutable mapping from objects to feature vectors (float64)."""

    __slots__ = ("_data",)

    def __init__(self, values: Mapping[ObjectRef, Sequence[float]]):
        data = {}
        for obj, vec in values.items():
            arr = np.asarray(vec, dtype=np.float64).copy()
            if arr.shape != (obj.type.dim,):
                raise ValueError(
                    f"feature vector for {obj!r} has shape {arr.shape}, "
                    f"expected ({obj.type.dim},)"
                )
            arr.flags.writeable = False
            data[obj] = arr
        self._data = data

    def __getitem__(self, obj: ObjectRef) -> np.ndarray:
        return self._data[obj]

    def __contains__(self, obj: ObjectRef) -> bool:
        return obj in self._data

    def __eq__(self, other) -> bool:
        if not isinstance(other, State):
            return NotImplemented
        if self._data.keys() != other._data.keys():
            return False
        return all(np.array_equal(v, other._data[k]) for k, v in self._data.items())

    def __hash__(self):
        raise TypeError("State is not hashable; compare with ==")

    @property
    def objects(self) -> list[ObjectRef]:
        return sorted(self._data, key=_sort_key)

    def objects_of_type(self, type_name: str) -> list[ObjectRef]:
        return sorted(
            (o for o in self._data if o.type.name == type_name), key=lambda o: o.name
        )

    def object_named(self, name: str) -> ObjectRef:
        for o in self._data:
            if o.name == name:
                return o
        raise KeyError(name)

    def get(self, obj: ObjectRef, feature: str) -> float:
        return float(self._data[obj][obj.type.feature_index(feature)])

    def updated(self, changes: Mapping[ObjectRef, Mapping[str, float]]) -> "State":
        """Return a new state with the given per-object feature overrides."""
        new = {o: np.array(v) for o, v in self._data.items()}
        for obj, feats in changes.items():
            vec = new[obj]
            for name, value in feats.items():
                vec[obj.type.feature_index(name)] = value
        return State(new)

    def to_json(self) -> dict:
        return {o.name: [float(x) for x in self._data[o]] for o in self.objects}


@dataclass(frozen=True)
class Predicate:
    """A named boolean classifier over a typed tuple of objects.

    Equality and hashing use the name and argument types only; the classifier
    is assumed deterministic and total on well-typed inputs.
    """

    name: str
    arg_types: tuple[ObjectType, ...]
    classifier: Callable[[State, tuple[ObjectRef, ...]], bool] = field(compare=False)

    def holds(self, state: State, args: tuple[ObjectRef, ...]) -> bool:
        if len(args) != len(self.arg_types):
            raise ValueError(f"{self.name} expects {len(self.arg_types)} args")
        for a, t in zip(args, self.arg_types):
            if a.type is not t and a.type != t:
                raise ValueError(f"{self.name}: {a!r} is not of type {t.name}")
        return bool(self.classifier(state, args))


@dataclass(frozen=True)
class GroundAtom:
    predicate: Predicate
    args: tuple[ObjectRef, ...]

    def __post_init__(self):
        if len(self.args) != len(self.predicate.arg_types):
            raise ValueError(f"arity mismatch for {self.predicate.name}")
        for a, t in zip(self.args, self.predicate.arg_types):
            if a.type != t:
                raise ValueError(
                    f"{self.predicate.name}: {a!r} does not match type {t.name}"
                )

    def holds(self, state: State) -> bool:
        return self.predicate.holds(state, self.args)

    def __str__(self):
        return f"{self.predicate.name}({','.join(a.name for a in self.args)})"

    def __repr__(self):
        return str(self)


@dataclass(frozen=True)
class ParameterizedSkill:
    """An executable action template: typed objects plus a continuous parameter box."""

    name: str
    object_signature: tuple[ObjectType, ...]
    param_bounds: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        for lo, hi in self.param_bounds:
            if not lo <= hi:
                raise ValueError(f"{self.name}: invalid bound ({lo}, {hi})")

    @property
    def param_dim(self) -> int:
        return len(self.param_bounds)


@dataclass(frozen=True)
class GroundAction:
    """A skill bound to concrete objects and continuous parameters."""

    skill: ParameterizedSkill
    objects: tuple[ObjectRef, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        sig = self.skill.object_signature
        if len(self.objects) != len(sig):
            raise ValueError(f"{self.skill.name}: wrong object count")
        for o, t in zip(self.objects, sig):
            if o.type != t:
                raise ValueError(f"{self.skill.name}: {o!r} is not a {t.name}")
        if len(self.params) != self.skill.param_dim:
            raise ValueError(f"{self.skill.name}: wrong parameter count")
        for p, (lo, hi) in zip(self.params, self.skill.param_bounds):
            if not (lo <= p <= hi):
                raise ValueError(f"{self.skill.name}: parameter {p} outside [{lo},{hi}]")

    def __str__(self):
        objs = ",".join(o.name for o in self.objects)
        if self.params:
            ps = ",".join(f"{p:.3f}" for p in self.params)
            return f"{self.skill.name}({objs})[{ps}]"
        return f"{self.skill.name}({objs})"


@dataclass(frozen=True)
class Task:
    """Objects, an initial state, a goal atom set, and a step horizon."""

    objects: tuple[ObjectRef, ...]
    initial_state: State
    goal: frozenset[GroundAtom]
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        obj_set = set(self.objects)
        for atom in self.goal:
            for a in atom.args:
                if a not in obj_set:
                    raise ValueError(f"goal atom {atom} references unknown object")

    def to_json(self) -> dict:
        return {
            "objects": {o.name: o.type.name for o in sorted(self.objects, key=_sort_key)},
            "initial_state": self.initial_state.to_json(),
            "goal": sorted(str(a) for a in self.goal),
            "horizon": self.horizon,
        }


def abstract(state: State, predicates: Iterable[Predicate]) -> frozenset[GroundAtom]:
    """All ground atoms over the state's objects that hold true.

    Enumerates every well-typed object tuple for every predicate; atoms not in
    the returned set are false by closed-world assumption.
    """
    atoms = set()
    for pred in sorted(predicates, key=lambda p: p.name):
        pools = [state.objects_of_type(t.name) for t in pred.arg_types]
        for combo in itertools.product(*pools):
            if pred.classifier(state, combo):
                atoms.add(GroundAtom(pred, combo))
    return frozenset(atoms)


def goal_holds(goal: Iterable[GroundAtom], state: State) -> bool:
    """True iff every goal atom holds in the state."""
    return all(atom.holds(state) for atom in goal)


def object_distance(state: State, a: ObjectRef, b: ObjectRef) -> float:
    """Euclidean distance between two objects' positional sub-vectors."""
    ka, kb = a.type.position_dim, b.type.position_dim
    if ka == 0 or kb == 0:
        raise ValueError(
            f"object_distance needs position features on both objects "
            f"({a!r}: {ka}, {b!r}: {kb})"
        )
    if ka != kb:
        raise ValueError(f"position dimensionality mismatch: {a!r} vs {b!r}")
    pa = state[a][:ka]
    pb = state[b][:kb]
    return float(math.sqrt(float(np.sum((pa - pb) ** 2))))
