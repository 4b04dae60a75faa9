"""Low-level controllers: budgeted search per subgoal, guided by a lifted
count-based dictionary of past trajectories, and the bilevel loop that
refines high-level plans through them.

A subgoal is an operator's effect bound to objects. Trajectories are
lifted by replacing objects mentioned in the subgoal with ``?vN`` variables
(numbered by first occurrence) and any other object by a reference to its
kind, written ``@kind``; binding a lifted trajectory resolves kind
references against the state it is replayed in.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, \
    Tuple

from oplearn.craftworld import Craft, CraftWorld, LowLevelAction, \
    MalformedAction, Mine, MoveTo, RawState, Task, check_reward, \
    location_name
from oplearn.planner import PlanningFailure, SearchBudget, plan
from oplearn.symbolic import AbstractState, Atom, GoalFormula, \
    GroundAction, Literal, Operator, eval_goal

K_DIFF = 6
K_TRAJ = 8


@dataclass(frozen=True)
class Subgoal:
    literals: Tuple[Literal, ...]

    def __post_init__(self):
        object.__setattr__(self, "literals",
                           tuple(sorted(set(self.literals))))
        if not self.literals:
            raise ValueError("a subgoal needs at least one literal")

    @classmethod
    def of(cls, action: GroundAction) -> "Subgoal":
        return cls(action.eff)

    def holds(self, state: AbstractState) -> bool:
        return all(l.holds(state.atoms) for l in self.literals)

    def __str__(self) -> str:
        return " & ".join(str(l) for l in self.literals)


# ---------------------------------------------------------------------------
# Lifting


def _signature(lit: Literal, colour: Mapping[str, Tuple]) -> Tuple:
    return (not lit.positive, lit.atom.predicate,
            tuple(colour[a] for a in lit.atom.args))


def lift(literals: Iterable[Literal]) -> Tuple[Tuple[str, ...], Dict[str, str]]:
    """Canonical lifted key and the object -> variable map producing it.

    Literals are ordered by a name-free signature (polarity, predicate and
    where each argument occurs elsewhere) before variables are numbered,
    so instances differing only in object names share a key.
    """
    lits = sorted(set(literals))
    occurs: Dict[str, List] = {}
    for lit in lits:
        for i, a in enumerate(lit.atom.args):
            occurs.setdefault(a, []).append((lit.positive,
                                             lit.atom.predicate, i))
    colour = {o: tuple(sorted(v)) for o, v in occurs.items()}
    order = sorted(lits, key=lambda l: (_signature(l, colour), l))
    mapping: Dict[str, str] = {}
    for lit in order:
        for a in lit.atom.args:
            if a not in mapping:
                mapping[a] = f"?v{len(mapping)}"
    key = tuple(sorted(str(l.substitute(mapping)) for l in lits))
    return key, mapping


def bind_key(key: Sequence[str], mapping: Mapping[str, str]
             ) -> Tuple[str, ...]:
    """Substitute objects back into a lifted key (inverse of ``lift``)."""
    inverse = {v: o for o, v in mapping.items()}
    out = []
    for text in key:
        for v in sorted(inverse, key=len, reverse=True):
            text = text.replace(v + ")", inverse[v] + ")") \
                .replace(v + " ", inverse[v] + " ")
        out.append(text)
    return tuple(sorted(out))


def _object_term(x: RawState, oid: str, mapping: Mapping[str, str]) -> str:
    if oid in mapping:
        return mapping[oid]
    kind = x.item_kind(oid)
    if kind is None:
        o = x.object(oid)
        kind = o.kind if o is not None else oid
    return "@" + kind


def lift_trajectory(x: RawState, traj: Sequence[LowLevelAction],
                    mapping: Mapping[str, str], world: CraftWorld
                    ) -> Tuple[Tuple, ...]:
    out = []
    for u in traj:
        if isinstance(u, MoveTo):
            loc = location_name(u.x, u.y)
            here = sorted(o.id for o in x.objects if (o.x, o.y) == (u.x, u.y))
            mapped = [o for o in here if o in mapping]
            if loc in mapping:
                term = mapping[loc]
            elif mapped:
                term = mapping[mapped[0]]
            elif here:
                term = _object_term(x, here[0], mapping)
            else:
                term = loc
            out.append(("move-to", term))
        elif isinstance(u, Mine):
            out.append(("mine", _object_term(x, u.tool, mapping),
                        _object_term(x, u.target, mapping)))
        else:
            out.append(("craft", u.output) + tuple(
                _object_term(x, i, mapping) for i in u.ingredients))
        x = world.step(x, u)
    return tuple(out)


def _resolve_object(x: RawState, term: str, binding: Mapping[str, str],
                    exclude=()) -> Optional[str]:
    if term.startswith("?"):
        return binding.get(term)
    if term.startswith("@"):
        kind = term[1:]
        for iid, k in x.inventory:
            if k == kind and iid not in exclude:
                return iid
        objs = sorted(o.id for o in x.objects if o.kind == kind)
        return objs[0] if objs else None
    return term


def _cell(x: RawState, ref: str) -> Optional[Tuple[int, int]]:
    if ref.startswith("loc_"):
        _, a, b = ref.split("_")
        return int(a), int(b)
    o = x.object(ref)
    return (o.x, o.y) if o is not None else None


def bind_step(x: RawState, step: Sequence, binding: Mapping[str, str]
              ) -> Optional[LowLevelAction]:
    head = step[0]
    if head == "move-to":
        ref = _resolve_object(x, step[1], binding)
        cell = _cell(x, ref) if ref else None
        return MoveTo(*cell) if cell else None
    if head == "mine":
        tool = _resolve_object(x, step[1], binding)
        target = _resolve_object(x, step[2], binding)
        return Mine(tool, target) if tool and target else None
    if head == "craft":
        used: List[str] = []
        for term in step[2:]:
            iid = _resolve_object(x, term, binding, exclude=used)
            if iid is None:
                return None
            used.append(iid)
        return Craft(step[1], tuple(used))
    return None


# ---------------------------------------------------------------------------
# Dictionary


@dataclass
class Entry:
    trajectory: Tuple[Tuple, ...]
    success: int = 0
    attempts: int = 0

    @property
    def rate(self) -> float:
        return self.success / self.attempts if self.attempts else 0.0


@dataclass
class Experience:
    """One observed (lifted key, lifted trajectory, verified?) triple."""
    key: Tuple[str, ...]
    trajectory: Tuple[Tuple, ...]
    success: bool


class PolicyDictionary:
    """Lifted subgoal -> trajectories ranked by success count.

    Within a key entries stay sorted by success count, descending, ties in
    insertion order. At most ``k_traj`` entries are kept; the one with the
    lowest success rate is evicted first.
    """

    def __init__(self, k_traj: int = K_TRAJ):
        self.k_traj = k_traj
        self.table: Dict[Tuple[str, ...], List[Entry]] = {}

    def __len__(self) -> int:
        return len(self.table)

    def entries(self, key: Tuple[str, ...]) -> List[Entry]:
        return self.table.get(tuple(key), [])

    def record(self, key: Tuple[str, ...], trajectory: Tuple[Tuple, ...],
               success: bool) -> None:
        key = tuple(key)
        entries = self.table.setdefault(key, [])
        for e in entries:
            if e.trajectory == trajectory:
                e.attempts += 1
                e.success += int(success)
                break
        else:
            if len(entries) >= self.k_traj:
                worst = min(range(len(entries)),
                            key=lambda i: (entries[i].rate,
                                           entries[i].success, -i))
                entries.pop(worst)
            entries.append(Entry(trajectory, int(success), 1))
        entries.sort(key=lambda e: -e.success)

    def merge(self, experiences: Iterable[Experience]) -> None:
        for exp in experiences:
            self.record(exp.key, exp.trajectory, exp.success)

    def copy(self) -> "PolicyDictionary":
        d = PolicyDictionary(self.k_traj)
        d.table = {k: [Entry(e.trajectory, e.success, e.attempts)
                       for e in v] for k, v in self.table.items()}
        return d

    def to_json(self) -> str:
        rows = [{"key": list(k),
                 "entries": [{"trajectory": [list(s) for s in e.trajectory],
                              "success": e.success, "attempts": e.attempts}
                             for e in v]}
                for k, v in sorted(self.table.items())]
        return json.dumps({"k_traj": self.k_traj, "keys": rows},
                          indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PolicyDictionary":
        data = json.loads(text)
        d = cls(data.get("k_traj", K_TRAJ))
        for row in data["keys"]:
            d.table[tuple(row["key"])] = [
                Entry(tuple(tuple(s) for s in e["trajectory"]),
                      e["success"], e["attempts"]) for e in row["entries"]]
        return d

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "PolicyDictionary":
        with open(path) as f:
            return cls.from_json(f.read())


def relabel(world: CraftWorld, before: RawState, after: RawState,
            trajectory: Sequence[LowLevelAction], k_diff: int = K_DIFF
            ) -> List[Experience]:
    """Hindsight records for one explored trajectory.

    The atoms the trajectory added form one key, and each added atom forms
    its own; a trajectory that changed nothing yields no record.
    """
    a0 = world.abstract(before).atoms
    added = sorted(world.abstract(after).atoms - a0)
    if not added:
        return []
    groups = []
    if len(added) <= k_diff:
        groups.append([Literal(a) for a in added])
    if len(added) > 1:
        groups.extend([Literal(a)] for a in added[:k_diff])
    out = []
    for lits in groups:
        key, mapping = lift(lits)
        out.append(Experience(key, lift_trajectory(before, trajectory,
                                                   mapping, world), True))
    return out


def relabel_and_update(d: PolicyDictionary, world: CraftWorld,
                       explored: Iterable[Tuple[RawState, RawState,
                                                Sequence[LowLevelAction]]],
                       k_diff: int = K_DIFF) -> PolicyDictionary:
    for before, after, traj in explored:
        d.merge(relabel(world, before, after, traj, k_diff))
    return d


# ---------------------------------------------------------------------------
# Subgoal search


@dataclass
class SubgoalResult:
    subgoal: Subgoal
    solved: bool
    trajectory: Tuple[LowLevelAction, ...] = ()
    expanded: int = 0
    reason: str = ""          # "budget" or "dead-end" on failure
    experiences: List[Experience] = field(default_factory=list)


def _replay(world: CraftWorld, x: RawState, steps: Sequence[Sequence],
            binding: Mapping[str, str]) -> Tuple[Optional[RawState], list]:
    traj = []
    for step in steps:
        u = bind_step(x, step, binding)
        if u is None:
            return None, traj
        try:
            x, ok = world.try_step(x, u)
        except MalformedAction:
            return None, traj
        traj.append(u)
        if not ok:
            return None, traj
    return x, traj


def solve_subgoal(world: CraftWorld, x: RawState, sg: Subgoal,
                  budget: int = 1000, policy: Optional[PolicyDictionary] = None,
                  max_depth: int = 4, record: bool = True,
                  relabel_explored: bool = True) -> SubgoalResult:
    """Reach ``sg`` from ``x`` within ``budget`` node expansions.

    Dictionary suggestions for the subgoal's lifted key are replayed
    first, most successful first, each replayed step costing one node.
    Breadth-first search over ``enumerate_actions`` follows, counting one
    node per generated successor, to depth ``max_depth``.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if sg.holds(world.abstract(x)):
        return SubgoalResult(sg, True, (), 0)
    key, mapping = lift(sg.literals)
    binding = {v: o for o, v in mapping.items()}
    used = 0
    experiences: List[Experience] = []
    if policy is not None:
        for entry in list(policy.entries(key)):
            if used >= budget:
                break
            steps = entry.trajectory[:budget - used]
            end, traj = _replay(world, x, steps, binding)
            used += max(1, len(traj))
            ok = (end is not None and len(steps) == len(entry.trajectory)
                  and sg.holds(world.abstract(end)))
            if record:
                experiences.append(Experience(key, entry.trajectory, ok))
            if ok:
                return SubgoalResult(sg, True, tuple(traj), used,
                                     experiences=experiences)
    frontier = deque([(x, ())])
    seen = {x}
    reason = "dead-end"
    while frontier:
        state, traj = frontier.popleft()
        if len(traj) >= max_depth:
            continue
        for u in world.enumerate_actions(state):
            if used >= budget:
                reason = "budget"
                frontier.clear()
                break
            used += 1
            nxt, ok = world.try_step(state, u)
            if not ok or nxt in seen:
                continue
            seen.add(nxt)
            path = traj + (u,)
            if record and relabel_explored:
                experiences.extend(relabel(world, x, nxt, path))
            if sg.holds(world.abstract(nxt)):
                if world.run(x, path) != nxt or \
                        not sg.holds(world.abstract(world.run(x, path))):
                    raise AssertionError("subgoal trajectory does not replay")
                if record:
                    experiences.append(Experience(
                        key, lift_trajectory(x, path, mapping, world), True))
                return SubgoalResult(sg, True, path, used,
                                     experiences=experiences)
            frontier.append((nxt, path))
    return SubgoalResult(sg, False, (), used, reason, experiences)


def search_lowlevel(world: CraftWorld, x: RawState, goal: GoalFormula,
                    budget: int) -> Tuple[Optional[Tuple[LowLevelAction, ...]],
                                          int]:
    """Breadth-first search straight to ``goal`` with no abstraction."""
    if eval_goal(world.abstract(x), goal):
        return (), 0
    frontier = deque([(x, ())])
    seen = {x}
    used = 0
    while frontier:
        state, traj = frontier.popleft()
        for u in world.enumerate_actions(state):
            if used >= budget:
                return None, used
            used += 1
            nxt, ok = world.try_step(state, u)
            if not ok or nxt in seen:
                continue
            seen.add(nxt)
            path = traj + (u,)
            if eval_goal(world.abstract(nxt), goal):
                return path, used
            frontier.append((nxt, path))
    return None, used


# ---------------------------------------------------------------------------
# Bilevel planning


@dataclass(frozen=True)
class Budgets:
    subgoal: int = 1000
    high_level: SearchBudget = SearchBudget()
    max_depth: int = 4
    max_replans: int = 16


@dataclass
class StepRecord:
    """One executed high-level step: which operator, did it verify."""
    operator: str            # operator tag
    name: str
    success: bool
    expanded: int


@dataclass
class BilevelResult:
    task_id: str
    solved: bool
    trajectory: Tuple[LowLevelAction, ...] = ()
    goal_index: Optional[int] = None
    high_level: Tuple[GroundAction, ...] = ()
    records: List[StepRecord] = field(default_factory=list)
    failures: List[dict] = field(default_factory=list)
    expanded: int = 0
    experiences: List[Experience] = field(default_factory=list)


def operator_id(op: Operator) -> str:
    return op.tag or f"{op.name}/{op.arity}"


def _active(ops: Sequence[Operator], banned: set) -> List[Operator]:
    """The first non-banned variant of each operator name, in order."""
    seen = set()
    out = []
    for op in ops:
        if op.name in seen or operator_id(op) in banned:
            continue
        seen.add(op.name)
        out.append(op)
    return out


def bilevel_plan(world: CraftWorld, task: Task, ops: Sequence[Operator],
                 goals: Sequence[GoalFormula],
                 policy: Optional[PolicyDictionary] = None,
                 budgets: Budgets = Budgets(), record: bool = True
                 ) -> BilevelResult:
    """Plan symbolically, refine each step with ``solve_subgoal``, and
    stop at the first goal candidate whose execution earns the reward.

    ``ops`` is in priority order: for each operator name only the first
    variant not yet ruled out on this task is offered to the planner.
    When a step's subgoal fails, that variant is ruled out for the task
    and the same goal candidate is planned again, up to
    ``budgets.max_replans`` times.
    """
    result = BilevelResult(task.id, False)
    x0 = task.initial_state
    for gi, goal in enumerate(goals):
        banned: set = set()
        for attempt in range(budgets.max_replans + 1):
            active = _active(ops, banned)
            start = world.abstract(x0)
            try:
                hl = plan(start, goal, active, budgets.high_level)
            except PlanningFailure as e:
                result.failures.append({"goal": gi, "stage": "plan",
                                        "reason": type(e).__name__})
                break
            x = x0
            traj: List[LowLevelAction] = []
            failed_at = None
            for i, action in enumerate(hl.steps):
                sg = Subgoal.of(action)
                r = solve_subgoal(world, x, sg, budgets.subgoal, policy,
                                  budgets.max_depth, record)
                result.expanded += r.expanded
                result.experiences.extend(r.experiences)
                oid = operator_id(action.operator)
                result.records.append(StepRecord(oid, action.operator.name,
                                                 r.solved, r.expanded))
                if not r.solved:
                    failed_at = i
                    banned.add(oid)
                    result.failures.append({
                        "goal": gi, "stage": "subgoal", "index": i,
                        "operator": oid, "reason": r.reason})
                    break
                x = world.run(x, r.trajectory)
                traj.extend(r.trajectory)
            if failed_at is not None:
                continue
            if check_reward(task, x, world):
                result.solved = True
                result.trajectory = tuple(traj)
                result.goal_index = gi
                result.high_level = hl.steps
                return result
            result.failures.append({"goal": gi, "stage": "reward"})
            break
    return result
