"""Greedy best-first search over grounded symbolic states.

Successors are grounded lazily per expansion by joining each operator's
positive preconditions against the state. Objects that only occur in unary
atoms and share a type and unary profile are interchangeable; only the
lowest-named members of such a class are bound, which removes symmetric
successors without losing any reachable goal.
"""
from __future__ import annotations

import heapq
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, \
    Tuple, Union

from oplearn.symbolic import AbstractState, GoalFormula, GroundAction, \
    Operator, OperatorLibrary, SymbolicError, Vocabulary, _index, \
    applicable, applicable_actions, apply_effects, eval_goal, is_variable, \
    match_literals


class PlanningFailure(Exception):
    def __init__(self, message: str, expanded: int = 0):
        super().__init__(message)
        self.expanded = expanded


class BudgetExhausted(PlanningFailure):
    """Search stopped at the node or length budget."""


class Unreachable(PlanningFailure):
    """The closed list was exhausted: no plan exists."""


class MalformedGoal(PlanningFailure):
    pass


@dataclass(frozen=True)
class SearchBudget:
    max_nodes: int = 100_000
    max_length: int = 60

    def __post_init__(self):
        if self.max_nodes < 1 or self.max_length < 1:
            raise ValueError("search budget must be positive")


@dataclass(frozen=True)
class HighLevelPlan:
    start: AbstractState
    steps: Tuple[GroundAction, ...]
    states: Tuple[AbstractState, ...]
    expanded: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


def _operators(lib) -> List[Operator]:
    if isinstance(lib, OperatorLibrary):
        return list(lib.operators)
    return list(lib)


# ---------------------------------------------------------------------------
# Heuristics


def goal_count(state: AbstractState, goal: GoalFormula) -> int:
    """Fewest unsatisfied goal literals over all variable assignments."""
    if eval_goal(state, goal):
        return 0
    var_types = dict(goal.variables)
    domains = [state.objects_of_type(t) for _, t in goal.variables]
    names = [v for v, _ in goal.variables]
    best = len(goal.literals)
    atoms = state.atoms
    for combo in itertools.product(*domains):
        b = dict(zip(names, combo))
        miss = sum(1 for lit in goal.literals
                   if not lit.substitute(b).holds(atoms))
        best = min(best, miss)
        if best <= 1:
            break
    return best


class TypeRelaxation:
    """Additive delete-relaxation estimate over a type-level abstraction.

    Every object is replaced by its declared type, so an atom becomes
    (predicate, argument types). Negative preconditions and parameter
    distinctness are ignored; the abstraction therefore over-approximates
    reachability and an infinite estimate proves a dead end.
    """

    def __init__(self, operators: Sequence[Operator], state: AbstractState):
        self.types = state.types
        present = sorted(set(state.objects.values()))
        self.actions = []
        for op in operators:
            choices = []
            for _, t in op.params:
                choices.append([c for c in present
                                if self.types.is_subtype(c, t)])
            for combo in itertools.product(*choices):
                m = {v: c for (v, _), c in zip(op.params, combo)}
                pre = tuple({(l.atom.predicate,
                              tuple(m[a] for a in l.atom.args))
                             for l in op.pre if l.positive})
                add = tuple({(l.atom.predicate,
                              tuple(m[a] for a in l.atom.args))
                             for l in op.eff if l.positive})
                self.actions.append((pre, add))
        self.present = present

    def costs(self, state: AbstractState) -> Dict[Tuple, float]:
        cost: Dict[Tuple, float] = {}
        for atom in state.atoms:
            cost[(atom.predicate,
                  tuple(state.objects[a] for a in atom.args))] = 0.0
        changed = True
        while changed:
            changed = False
            for pre, add in self.actions:
                total = 1.0
                for p in pre:
                    c = cost.get(p)
                    if c is None:
                        break
                    total += c
                else:
                    for a in add:
                        if total < cost.get(a, math.inf):
                            cost[a] = total
                            changed = True
        return cost

    def estimate(self, state: AbstractState, goal: GoalFormula) -> float:
        cost = self.costs(state)
        var_types = dict(goal.variables)
        choices = []
        for v, t in goal.variables:
            choices.append([c for c in self.present
                            if self.types.is_subtype(c, t)])
        best = math.inf
        for combo in itertools.product(*choices):
            m = dict(zip(var_types, combo))
            total = 0.0
            for lit in goal.literals:
                if not lit.positive:
                    continue
                key = (lit.atom.predicate,
                       tuple(m.get(a, state.objects.get(a)) for a in
                             lit.atom.args))
                c = cost.get(key, math.inf)
                total += c
                if total >= best:
                    break
            best = min(best, total)
        return best


def heuristic(state: AbstractState, goal: GoalFormula, lib=None,
              mode: str = "goal-count") -> float:
    """Non-negative estimate, zero exactly when the goal holds.

    ``goal-count`` counts unsatisfied goal literals under the best
    assignment; ``additive`` adds the type-level relaxed cost estimate.
    """
    gc = goal_count(state, goal)
    if mode == "goal-count" or gc == 0:
        return float(gc)
    if mode != "additive":
        raise ValueError(f"unknown heuristic {mode!r}")
    return gc + TypeRelaxation(_operators(lib or ()), state).estimate(
        state, goal)


# ---------------------------------------------------------------------------
# Search


def symmetry_classes(state: AbstractState,
                     protected: FrozenSet[str] = frozenset()
                     ) -> Dict[str, List[str]]:
    """Map each interchangeable object to its class (sorted members)."""
    profile: Dict[str, set] = defaultdict(set)
    nonunary = set(protected)
    for atom in state.atoms:
        if len(atom.args) == 1:
            profile[atom.args[0]].add(atom.predicate)
        else:
            nonunary.update(atom.args)
    groups: Dict[Tuple, List[str]] = defaultdict(list)
    for obj, t in state.objects.items():
        if obj in nonunary:
            continue
        groups[(t, frozenset(profile.get(obj, ())))].append(obj)
    out = {}
    for members in groups.values():
        if len(members) > 1:
            members.sort()
            for m in members:
                out[m] = members
    return out


def _successors(state: AbstractState, ops: Sequence[Operator],
                protected: FrozenSet[str], use_symmetry: bool
                ) -> List[GroundAction]:
    index = _index(state.atoms)
    classes = symmetry_classes(state, protected) if use_symmetry else {}
    out: List[Tuple[Tuple, GroundAction]] = []
    for rank, op in enumerate(ops):
        allowed = None
        if classes:
            # Only the first ``arity`` members of a class can matter.
            k = op.arity
            allowed = {}
            for var, t in op.params:
                objs = state.objects_of_type(t)
                allowed[var] = [o for o in objs if o not in classes or
                                classes[o].index(o) < k]
        for a in applicable_actions(op, state, allowed=allowed, index=index):
            if classes and not _prefix_binding(a.binding, classes):
                continue
            out.append(((op.name, rank, a.binding), a))
    out.sort(key=lambda p: p[0])
    return [a for _, a in out]


def _prefix_binding(binding: Sequence[str],
                    classes: Dict[str, List[str]]) -> bool:
    used: Dict[int, set] = defaultdict(set)
    for o in binding:
        if o in classes:
            used[id(classes[o])].add(o)
    for o in binding:
        if o in classes:
            members = classes[o]
            n = len(used[id(members)])
            if set(members[:n]) != used[id(members)]:
                return False
    return True


@dataclass(order=True)
class _Node:
    priority: Tuple
    state: AbstractState = field(compare=False)
    parent: Optional["_Node"] = field(compare=False, default=None)
    action: Optional[GroundAction] = field(compare=False, default=None)
    depth: int = field(compare=False, default=0)


def plan(start: AbstractState, goal: GoalFormula,
         lib: Union[OperatorLibrary, Sequence[Operator]],
         budget: SearchBudget = SearchBudget(),
         heuristic_mode: str = "additive", use_symmetry: bool = True,
         vocabulary: Optional[Vocabulary] = None,
         trace: Optional[list] = None) -> HighLevelPlan:
    """Find a validated plan or raise a ``PlanningFailure``.

    Ties are broken by lower heuristic, then shallower depth, then the
    order in which successors were generated: operator name, position of
    the operator among same-named candidates in ``lib``, then binding.
    """
    ops = _operators(lib)
    if vocabulary is None and isinstance(lib, OperatorLibrary):
        vocabulary = lib.vocabulary
    try:
        if vocabulary is not None:
            goal.check(vocabulary, start.objects)
        for c in goal.constants:
            if c not in start.objects:
                raise SymbolicError(f"goal mentions unknown object {c!r}")
    except SymbolicError as e:
        raise MalformedGoal(str(e)) from None
    protected = goal.constants
    relax = TypeRelaxation(ops, start) if heuristic_mode == "additive" \
        else None

    def h(state: AbstractState) -> float:
        gc = goal_count(state, goal)
        if gc == 0 or relax is None:
            return float(gc)
        return gc + relax.estimate(state, goal)

    counter = itertools.count()
    h0 = h(start)
    if h0 == 0:
        return HighLevelPlan(start, (), (), 0)
    if math.isinf(h0):
        raise Unreachable("goal unreachable even under relaxation", 0)
    frontier = [_Node((h0, 0, next(counter)), start)]
    seen = {start}
    expanded = 0
    truncated = False
    while frontier:
        node = heapq.heappop(frontier)
        if node.depth >= budget.max_length:
            truncated = True
            continue
        if expanded >= budget.max_nodes:
            raise BudgetExhausted(
                f"node budget {budget.max_nodes} exhausted", expanded)
        expanded += 1
        if trace is not None:
            trace.append({"expanded": expanded, "depth": node.depth,
                          "h": node.priority[0],
                          "via": str(node.action) if node.action else None})
        for action in _successors(node.state, ops, protected, use_symmetry):
            child = apply_effects(node.state, action.eff)
            if child in seen:
                continue
            seen.add(child)
            hc = h(child)
            if math.isinf(hc):
                continue
            cnode = _Node((hc, node.depth + 1, next(counter)), child, node,
                          action, node.depth + 1)
            if hc == 0:
                result = _extract(start, cnode, expanded)
                if not validate(result, start, goal):
                    raise AssertionError("planner produced an invalid plan")
                return result
            heapq.heappush(frontier, cnode)
    if truncated:
        raise BudgetExhausted(
            f"plan length budget {budget.max_length} exhausted", expanded)
    raise Unreachable("search space exhausted", expanded)


def _extract(start: AbstractState, node: _Node, expanded: int
             ) -> HighLevelPlan:
    steps, states = [], []
    while node.action is not None:
        steps.append(node.action)
        states.append(node.state)
        node = node.parent
    return HighLevelPlan(start, tuple(reversed(steps)),
                         tuple(reversed(states)), expanded)


def find_invalid_step(steps: Sequence[GroundAction], start: AbstractState,
                      goal: GoalFormula) -> Optional[int]:
    """Index of the first inapplicable step, ``len(steps)`` if the goal
    fails at the end, or None for a valid plan."""
    state = start
    for i, a in enumerate(steps):
        if not applicable(state, a):
            return i
        state = apply_effects(state, a.eff)
    return None if eval_goal(state, goal) else len(steps)


def validate(plan_: Union[HighLevelPlan, Sequence[GroundAction]],
             start: AbstractState, goal: GoalFormula, lib=None) -> bool:
    steps = plan_.steps if isinstance(plan_, HighLevelPlan) else plan_
    return find_invalid_step(steps, start, goal) is None


def format_trace(trace: Iterable[dict]) -> str:
    return "\n".join(
        f"{t['expanded']}\tdepth={t['depth']}\th={t['h']}\tvia={t['via']}"
        for t in trace) + "\n"
