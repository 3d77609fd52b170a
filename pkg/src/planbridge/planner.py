"""Lifted-operator STRIPS planner: grounding, LM-Cut, A*, and plan execution.

The planner works over the abstract state (ground atoms) only; continuous
parameters come from each operator's parameter policy at execution time.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .core import (
    GroundAction,
    GroundAtom,
    ObjectRef,
    ObjectType,
    ParameterizedSkill,
    Predicate,
    State,
    abstract,
)


class PlannerResourceError(RuntimeError):
    """Raised when A* exceeds its search-node cap."""


@dataclass(frozen=True)
class LiftedAtom:
    predicate: Predicate
    variables: tuple[str, ...]

    def __post_init__(self):
        if len(self.variables) != len(self.predicate.arg_types):
            raise ValueError(f"arity mismatch in lifted {self.predicate.name}")

    def ground(self, binding: dict[str, ObjectRef]) -> GroundAtom:
        return GroundAtom(self.predicate, tuple(binding[v] for v in self.variables))


@dataclass(frozen=True)
class Operator:
    """A STRIPS schema linked to an executable skill.

    ``skill_object_vars`` names the parameters passed to the linked skill, and
    ``parameter_policy`` greedily supplies its continuous parameters.
    """

    name: str
    parameters: tuple[tuple[str, ObjectType], ...]
    preconditions: frozenset[LiftedAtom]
    add_effects: frozenset[LiftedAtom]
    delete_effects: frozenset[LiftedAtom]
    linked_skill: ParameterizedSkill
    skill_object_vars: tuple[str, ...]
    parameter_policy: Callable[[State], tuple[float, ...]] = field(
        default=lambda state: (), compare=False
    )

    def __post_init__(self):
        declared = {v for v, _ in self.parameters}
        used = set(self.skill_object_vars)
        for atom in self.preconditions | self.add_effects | self.delete_effects:
            used.update(atom.variables)
        missing = used - declared
        if missing:
            raise ValueError(f"{self.name}: undeclared variables {sorted(missing)}")


@dataclass(frozen=True)
class GroundOperator:
    operator: Operator
    binding: tuple[ObjectRef, ...]  # aligned with operator.parameters
    preconditions: frozenset[GroundAtom]
    add_effects: frozenset[GroundAtom]
    delete_effects: frozenset[GroundAtom]
    cost: int = 1

    @property
    def name(self) -> str:
        return f"{self.operator.name}({','.join(o.name for o in self.binding)})"

    def sort_key(self) -> tuple:
        return (self.operator.name, tuple(o.name for o in self.binding))

    def skill_action(self, state: State) -> GroundAction:
        var_map = {v: o for (v, _), o in zip(self.operator.parameters, self.binding)}
        objects = tuple(var_map[v] for v in self.operator.skill_object_vars)
        params = tuple(float(p) for p in self.operator.parameter_policy(state))
        return GroundAction(self.operator.linked_skill, objects, params)

    def __repr__(self):
        return self.name


def ground(
    operators: Iterable[Operator],
    objects: Iterable[ObjectRef],
    init_atoms: frozenset[GroundAtom] = frozenset(),
    static_predicates: Iterable[Predicate] = (),
) -> list[GroundOperator]:
    """All type-consistent groundings, pruned by static preconditions.

    A grounding is dropped when one of its preconditions uses a static
    predicate (one no operator ever adds or deletes) that does not hold in
    the initial abstract state.
    """
    statics = set(static_predicates)
    by_type: dict[str, list[ObjectRef]] = {}
    for obj in sorted(objects, key=lambda o: (o.type.name, o.name)):
        by_type.setdefault(obj.type.name, []).append(obj)

    result = []
    for op in sorted(operators, key=lambda o: o.name):
        pools = [by_type.get(t.name, []) for _, t in op.parameters]
        var_names = [v for v, _ in op.parameters]
        for combo in itertools.product(*pools):
            binding = dict(zip(var_names, combo))
            pre = frozenset(a.ground(binding) for a in op.preconditions)
            if any(a.predicate in statics and a not in init_atoms for a in pre):
                continue
            result.append(
                GroundOperator(
                    operator=op,
                    binding=tuple(combo),
                    preconditions=pre,
                    add_effects=frozenset(a.ground(binding) for a in op.add_effects),
                    delete_effects=frozenset(
                        a.ground(binding) for a in op.delete_effects
                    ),
                )
            )
    result.sort(key=GroundOperator.sort_key)
    return result


class _Indexed:
    """Integer-indexed view of a ground problem (atoms and operators).

    Search and heuristics run on small int structures; GroundAtom hashing
    happens once at indexing time.
    """

    def __init__(self, ops: Sequence[GroundOperator]):
        self.atom_id: dict[GroundAtom, int] = {}
        self.atoms: list[GroundAtom] = []
        self.pre: list[tuple[int, ...]] = []
        self.add: list[tuple[int, ...]] = []
        self.dele: list[tuple[int, ...]] = []
        self.costs: list[float] = []
        self.ops = list(ops)
        for op in self.ops:
            self.pre.append(tuple(sorted(self.id_of(a) for a in op.preconditions)))
            self.add.append(tuple(sorted(self.id_of(a) for a in op.add_effects)))
            self.dele.append(tuple(sorted(self.id_of(a) for a in op.delete_effects)))
            self.costs.append(float(op.cost))

    def id_of(self, atom: GroundAtom) -> int:
        i = self.atom_id.get(atom)
        if i is None:
            i = len(self.atoms)
            self.atom_id[atom] = i
            self.atoms.append(atom)
        return i

    def ids(self, atoms: Iterable[GroundAtom]) -> frozenset[int]:
        return frozenset(self.id_of(a) for a in atoms)

    def atom_sort_keys(self) -> list[str]:
        return [str(a) for a in self.atoms]


def _hmax_values(idx: _Indexed, init: frozenset[int], costs: Sequence[float]
                 ) -> list[float]:
    """Per-atom h_max under the given op costs (inf where unreachable)."""
    n = len(idx.atoms)
    value = [math.inf] * n
    for a in init:
        value[a] = 0.0
    changed = True
    while changed:
        changed = False
        for i, pre in enumerate(idx.pre):
            base = 0.0
            for p in pre:
                v = value[p]
                if v > base:
                    base = v
                if base == math.inf:
                    break
            if base == math.inf:
                continue
            base += costs[i]
            for a in idx.add[i]:
                if base < value[a]:
                    value[a] = base
                    changed = True
    return value


def _hmax_int(idx: _Indexed, init: frozenset[int], goal: frozenset[int]) -> float:
    value = _hmax_values(idx, init, idx.costs)
    return max((value[g] for g in goal), default=0.0)


def _lmcut_int(idx: _Indexed, init: frozenset[int], goal: frozenset[int]) -> float:
    """LM-Cut over the delete relaxation: sum of disjunctive landmark costs.

    Iteratively computes h_max under reduced costs, extracts the
    justification-graph cut between the initial-state zone and the zero-cost
    goal zone, and accumulates the cheapest cut cost.
    """
    if not goal:
        return 0
    goal_list = sorted(goal)
    n_ops = len(idx.pre)
    costs = list(idx.costs)
    keys = idx.atom_sort_keys()

    total = 0.0
    while True:
        value = _hmax_values(idx, init, costs)
        if any(value[g] == math.inf for g in goal_list):
            return math.inf
        h_goal = max(value[g] for g in goal_list)
        if h_goal <= 0.0:
            break

        # Supporter: the h_max-maximizing precondition, deterministic ties.
        supporter = [-1] * n_ops
        for i in range(n_ops):
            pre = idx.pre[i]
            if not pre:
                continue
            if any(value[p] == math.inf for p in pre):
                continue
            supporter[i] = max(pre, key=lambda p: (value[p], keys[p]))
        goal_supporter = max(goal_list, key=lambda p: (value[p], keys[p]))

        # Goal zone: atoms reaching the artificial goal through zero-cost
        # justification edges (the artificial end operator costs zero).
        goal_zone = {goal_supporter}
        grew = True
        while grew:
            grew = False
            for i in range(n_ops):
                if supporter[i] < 0 or costs[i] > 0.0:
                    continue
                s = supporter[i]
                if s not in goal_zone and any(a in goal_zone for a in idx.add[i]):
                    goal_zone.add(s)
                    grew = True

        # Init zone: forward from the initial atoms avoiding the goal zone;
        # the cut is every justification edge crossing into the goal zone.
        before = set(a for a in init if a not in goal_zone)
        cut = set()
        queue = list(before)
        while queue:
            a = queue.pop()
            for i in range(n_ops):
                if supporter[i] != a:
                    continue
                if any(e in goal_zone for e in idx.add[i]):
                    cut.add(i)
                    continue
                for e in idx.add[i]:
                    if e not in before:
                        before.add(e)
                        queue.append(e)
        if not cut:
            break  # degenerate; cannot happen with h_goal > 0
        lam = min(costs[i] for i in cut)
        total += lam
        for i in cut:
            costs[i] -= lam
    return int(total) if float(total).is_integer() else total


def hmax(
    atoms: frozenset[GroundAtom],
    goal: frozenset[GroundAtom],
    ops: Sequence[GroundOperator],
) -> float:
    """Max-cost relaxed-reachability heuristic; inf if the goal is unreachable."""
    idx = _Indexed(ops)
    return _hmax_int(idx, idx.ids(atoms), idx.ids(goal))


def lmcut(
    atoms: frozenset[GroundAtom],
    goal: frozenset[GroundAtom],
    ops: Sequence[GroundOperator],
) -> float:
    """LM-Cut heuristic value of ``atoms`` with respect to ``goal``."""
    idx = _Indexed(ops)
    return _lmcut_int(idx, idx.ids(atoms), idx.ids(goal))


@dataclass(frozen=True)
class Skeleton:
    """An ordered sequence of ground operators chained by effects."""

    steps: tuple[GroundOperator, ...]

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i):
        return self.steps[i]


def astar_plan(
    init_atoms: frozenset[GroundAtom],
    goal: frozenset[GroundAtom],
    ops: Sequence[GroundOperator],
    heuristic: Callable[[frozenset[GroundAtom]], float] | None = None,
    node_cap: int = 10**6,
) -> Skeleton | None:
    """Minimum-length skeleton under STRIPS semantics, or None if unsolvable.

    Deterministic tie-breaking by (f, h, insertion order). Raises
    PlannerResourceError past ``node_cap`` expansions. ``heuristic``
    defaults to LM-Cut; a custom one receives GroundAtom frozensets.
    """
    ops = sorted(ops, key=GroundOperator.sort_key)
    idx = _Indexed(ops)
    goal_ids = idx.ids(goal)
    init = idx.ids(init_atoms)

    h_cache: dict[frozenset[int], float] = {}

    if heuristic is None:
        def h_of(state: frozenset[int]) -> float:
            h = h_cache.get(state)
            if h is None:
                h = _lmcut_int(idx, state, goal_ids)
                h_cache[state] = h
            return h
    else:
        def h_of(state: frozenset[int]) -> float:
            h = h_cache.get(state)
            if h is None:
                h = heuristic(frozenset(idx.atoms[i] for i in state))
                h_cache[state] = h
            return h

    h0 = h_of(init)
    if math.isinf(h0):
        return None
    counter = itertools.count()
    open_heap = [(h0, h0, next(counter), init)]
    best_g: dict[frozenset[int], float] = {init: 0.0}
    parent: dict[frozenset[int], tuple] = {}
    n_ops = len(ops)
    expansions = 0
    while open_heap:
        f, h, _, state = heapq.heappop(open_heap)
        g = f - h
        if g > best_g.get(state, math.inf):
            continue  # stale heap entry
        if goal_ids <= state:
            steps = []
            cur = state
            while cur in parent:
                prev, op = parent[cur]
                steps.append(op)
                cur = prev
            return Skeleton(tuple(reversed(steps)))
        expansions += 1
        if expansions > node_cap:
            raise PlannerResourceError(f"A* exceeded {node_cap} expansions")
        for i in range(n_ops):
            if not all(p in state for p in idx.pre[i]):
                continue
            nxt = frozenset((state - frozenset(idx.dele[i])) | frozenset(idx.add[i]))
            ng = g + idx.costs[i]
            if ng >= best_g.get(nxt, math.inf):
                continue
            nh = h_of(nxt)
            if math.isinf(nh):
                continue
            best_g[nxt] = ng
            parent[nxt] = (state, ops[i])
            heapq.heappush(open_heap, (ng + nh, nh, next(counter), nxt))
    return None


# Plan policy statuses.
ACTIVE = "active"
STUCK = "stuck"
DONE = "done"

ADVANCE = "advance"


class PlanPolicy:
    """Executes a skeleton's linked skills and monitors expected effects.

    ``next_action`` emits the cursor operator's skill action; after the
    environment step, ``observe`` must be called with the resulting state.
    Once stuck, the policy stays stuck until replaced.
    """

    def __init__(self, skeleton: Skeleton, predicates: Iterable[Predicate]):
        self.skeleton = skeleton
        self.predicates = tuple(predicates)
        self.cursor = 0
        self._status = DONE if len(skeleton) == 0 else ACTIVE
        self._awaiting_observe = False

    @property
    def status(self) -> str:
        return self._status

    def next_action(self, state: State) -> GroundAction:
        if self._status != ACTIVE:
            raise RuntimeError(f"plan policy is {self._status}")
        if self._awaiting_observe:
            raise RuntimeError("observe() must be called after each action")
        self._awaiting_observe = True
        return self.skeleton[self.cursor].skill_action(state)

    def observe(self, resulting_state: State) -> str:
        """Check the executed operator's effects and the next preconditions."""
        if not self._awaiting_observe:
            raise RuntimeError("observe() called before any action was executed")
        self._awaiting_observe = False
        op = self.skeleton[self.cursor]
        atoms = abstract(resulting_state, self.predicates)
        ok = op.add_effects <= atoms and not (op.delete_effects & atoms)
        if ok and self.cursor + 1 < len(self.skeleton):
            ok = self.skeleton[self.cursor + 1].preconditions <= atoms
        if not ok:
            self._status = STUCK
            return STUCK
        self.cursor += 1
        if self.cursor == len(self.skeleton):
            self._status = DONE
        return ADVANCE


def make_plan_policy(skeleton: Skeleton, env) -> PlanPolicy:
    """Wrap a skeleton with the environment's abstraction predicates."""
    return PlanPolicy(skeleton, env.abstraction_predicates)


def check_progress(policy: PlanPolicy, resulting_state: State) -> str:
    """Advance/stuck verdict for the most recently executed plan action."""
    return policy.observe(resulting_state)


def plan_for_task(env, state: State, goal: frozenset[GroundAtom],
                  node_cap: int = 10**6) -> Skeleton | None:
    """Ground the environment's operators at ``state`` and run A* with LM-Cut."""
    atoms = abstract(state, env.abstraction_predicates)
    ops = ground(env.operators, state.objects, atoms, env.static_predicates)
    return astar_plan(atoms, goal, ops, node_cap=node_cap)


class CachingPlanner:
    """Memoizes grounding and skeletons across replans within one run.

    Sound because planning is a deterministic function of the abstract state,
    the goal, and the object set; replanning from a repeated stuck state is a
    dictionary hit.
    """

    def __init__(self, node_cap: int = 10**6):
        self.node_cap = node_cap
        self._ops: dict = {}
        self._plans: dict = {}

    def __call__(self, env, state: State, goal: frozenset[GroundAtom]
                 ) -> Skeleton | None:
        atoms = abstract(state, env.abstraction_predicates)
        okey = tuple(state.objects)
        statics = set(env.static_predicates)
        gkey = (okey, frozenset(a for a in atoms if a.predicate in statics))
        ops = self._ops.get(gkey)
        if ops is None:
            ops = ground(env.operators, state.objects, atoms, env.static_predicates)
            self._ops[gkey] = ops
        pkey = (okey, atoms, frozenset(goal))
        if pkey not in self._plans:
            self._plans[pkey] = astar_plan(atoms, goal, ops, node_cap=self.node_cap)
        return self._plans[pkey]
