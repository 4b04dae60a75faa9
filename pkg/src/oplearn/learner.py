"""The learning loop: propose operators, plan and execute with them, update
the low-level policy, then keep only operators that proved themselves.

Each operator candidate carries a tag of the form ``name/arity#hash`` so
several definitions of one name can coexist while evidence accumulates.
For an operator, ``b`` counts the executed high-level steps that used it
and ``s`` those whose subgoal was then reached at the low level.
"""
from __future__ import annotations

import hashlib
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from oplearn.craftworld import CraftWorld, Task
from oplearn.pddl import format_goal, format_operator
from oplearn.planner import SearchBudget
from oplearn.policy import BilevelResult, Budgets, PolicyDictionary, \
    bilevel_plan, operator_id
from oplearn.proposer import Backend, Exemplar, Proposer, ProposerConfig, \
    Rejection, correct_syntax_report, extract_undefined_names
from oplearn.symbolic import Operator, OperatorLibrary, SymbolicError


@dataclass(frozen=True)
class LearnerConfig:
    iterations: int = 2
    tau_b: int = 1
    tau_r: float = 0.5
    proposer: ProposerConfig = ProposerConfig()
    subgoal_budget: int = 1000
    high_level_budget: int = 100_000
    max_depth: int = 4
    max_replans: int = 16
    n_exemplars: int = 3
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.tau_b < 1:
            raise ValueError("tau_b must be at least 1")
        if not 0 <= self.tau_r <= 1:
            raise ValueError("tau_r must lie in [0, 1]")
        if self.subgoal_budget < 1 or self.high_level_budget < 1:
            raise ValueError("budgets must be positive")

    @property
    def budgets(self) -> Budgets:
        return Budgets(self.subgoal_budget,
                       SearchBudget(self.high_level_budget),
                       self.max_depth, self.max_replans)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown learner settings: {sorted(unknown)}")
        if "proposer" in d and isinstance(d["proposer"], dict):
            d["proposer"] = ProposerConfig(**d["proposer"])
        return cls(**d)


@dataclass
class OperatorStats:
    b: int = 0
    s: int = 0

    @property
    def rate(self) -> float:
        return self.s / self.b if self.b else 0.0


@dataclass
class TaskStatus:
    task_id: str
    solved: bool = False
    trajectory: tuple = ()
    iteration: Optional[int] = None


@dataclass
class IterationReport:
    iteration: int
    attempted: List[str]
    solved: List[str]
    proposed: List[str] = field(default_factory=list)
    retained: List[str] = field(default_factory=list)
    candidates: List[str] = field(default_factory=list)
    rejected: Dict[str, str] = field(default_factory=dict)
    stats: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    dictionary_size: int = 0
    expanded: int = 0
    wall_time: float = 0.0

    @property
    def solve_rate(self) -> float:
        return len(self.solved) / len(self.attempted) if self.attempted \
            else 0.0

    def to_record(self, timing: bool = False) -> dict:
        """Plain data for the report file; wall time only on request so
        that identical runs produce identical records."""
        rec = asdict(self)
        rec["stats"] = {k: list(v) for k, v in sorted(self.stats.items())}
        if not timing:
            rec.pop("wall_time")
        return rec


@dataclass
class FilterResult:
    verified: List[Operator]
    candidates: List[Operator]
    rejected: Dict[str, str]

    def library(self, vocabulary, name: str = "learned") -> OperatorLibrary:
        return OperatorLibrary(vocabulary,
                               tuple(op.untagged() for op in self.verified),
                               name)


def tag_operator(op: Operator) -> Operator:
    digest = hashlib.sha1(format_operator(op).encode()).hexdigest()[:8]
    return Operator(op.name, op.params, op.pre, op.eff,
                    f"{op.name}/{op.arity}#{digest}")


def _size(op: Operator) -> int:
    return len(op.pre) + len(op.eff)


def score_and_filter(candidates: Sequence[Operator],
                     stats: Dict[str, OperatorStats],
                     protected: Sequence[Operator] = (),
                     tau_b: int = 1, tau_r: float = 0.5) -> FilterResult:
    """Keep operators with ``b > tau_b`` and ``s / b > tau_r``.

    Operators with too little evidence (``b <= tau_b``) stay candidates.
    When several variants of one name pass, the best rate wins, then the
    smaller definition. Protected operators are always kept.
    """
    protected_ids = {operator_id(op) for op in protected}
    passing: Dict[str, List[Operator]] = {}
    still: List[Operator] = []
    rejected: Dict[str, str] = {}
    for op in candidates:
        oid = operator_id(op)
        if oid in protected_ids:
            continue
        st = stats.get(oid, OperatorStats())
        if st.b <= tau_b:
            still.append(op)
        elif st.rate > tau_r:
            passing.setdefault(op.name, []).append(op)
        else:
            rejected[oid] = f"low success rate {st.s}/{st.b}"
    protected_names = {op.name for op in protected}
    verified = list(protected)
    for name, ops in sorted(passing.items()):
        ops.sort(key=lambda o: (-stats[operator_id(o)].rate, _size(o),
                                operator_id(o)))
        if name in protected_names:
            keep = []
        else:
            keep = ops[:1]
        verified.extend(keep)
        for o in ops[len(keep):]:
            rejected[operator_id(o)] = "redundant variant"
    return FilterResult(verified, still, rejected)


def planning_order(verified: Sequence[Operator],
                   candidates: Sequence[Operator]) -> List[Operator]:
    """Verified operators first, then candidates with the most
    preconditions first; proposal order breaks ties."""
    ranked = sorted(enumerate(candidates),
                    key=lambda p: (p[1].name, -len(p[1].pre), p[0]))
    return list(verified) + [op for _, op in ranked]


class Learner:
    def __init__(self, cfg: LearnerConfig, backend: Backend,
                 world: Optional[CraftWorld] = None,
                 policy: Optional[PolicyDictionary] = None,
                 seed_exemplars: Sequence[Exemplar] = ()):
        self.cfg = cfg
        self.world = world or CraftWorld()
        self.proposer = Proposer(backend, cfg.proposer, cfg.jobs)
        self.policy = policy if policy is not None else PolicyDictionary()
        self.seed_exemplars = list(seed_exemplars)
        self.rng = random.Random(cfg.seed)
        self.stats: Dict[str, OperatorStats] = {}
        self.exemplars: List[Exemplar] = []
        self.seen_definitions: Dict[str, str] = {}

    # -- helpers ------------------------------------------------------------

    def _sample_exemplars(self) -> List[Exemplar]:
        k = min(self.cfg.n_exemplars, len(self.exemplars))
        return self.rng.sample(self.exemplars, k) if k else []

    def _attempt(self, tasks: Sequence[Task], ops: Sequence[Operator],
                 goals: Dict[str, list], policy: PolicyDictionary,
                 record: bool = True) -> List[BilevelResult]:
        def one(task):
            return bilevel_plan(self.world, task, ops, goals[task.id],
                                policy, self.cfg.budgets, record)
        if self.cfg.jobs == 1:
            return [one(t) for t in tasks]
        with ThreadPoolExecutor(self.cfg.jobs) as pool:
            return list(pool.map(one, tasks))

    # -- the loop -----------------------------------------------------------

    def run(self, dataset: Sequence[Task], init_lib: OperatorLibrary,
            on_report: Optional[Callable[[IterationReport], None]] = None
            ) -> Tuple[OperatorLibrary, List[IterationReport]]:
        if not dataset:
            raise ValueError("dataset is empty")
        vocab = init_lib.vocabulary
        protected = [tag_operator(op) for op in init_lib.operators]
        verified: List[Operator] = list(protected)
        candidates: List[Operator] = []
        status = {t.id: TaskStatus(t.id) for t in dataset}
        order = sorted(dataset, key=lambda t: t.id)
        self.rng.shuffle(order)
        reports = []
        for it in range(1, self.cfg.iterations + 1):
            t0 = time.perf_counter()
            todo = [t for t in order if not status[t.id].solved]
            report = IterationReport(it, [t.id for t in todo], [])
            known = verified + candidates
            exemplars = self._sample_exemplars()
            # Propose decompositions and define the operators they name.
            decomps = []
            for t in todo:
                decomps.extend(self.proposer.propose_decompositions(
                    t, self.world.abstract(t.initial_state),
                    OperatorLibrary(vocab, _unique(verified), "current"),
                    exemplars))
            usages = extract_undefined_names(decomps, known)
            # Names with a pending variant are not re-proposed.
            usages = [(k, u) for k, u in usages
                      if not any(o.name == k[0] for o in known)]
            defs = self.proposer.propose_operator_definitions(
                usages, vocab,
                OperatorLibrary(vocab, _unique(verified), "current"))
            for key in sorted(defs):
                for raw in defs[key]:
                    result, _ = correct_syntax_report(raw, vocab)
                    if isinstance(result, Rejection):
                        report.rejected[f"{raw.name}#{raw.fingerprint}"] = \
                            result.reason
                        continue
                    op = tag_operator(result)
                    oid = operator_id(op)
                    if oid in self.seen_definitions:
                        continue
                    self.seen_definitions[oid] = "candidate"
                    candidates.append(op)
                    report.proposed.append(oid)
            # Goals, then plan and execute against a frozen snapshot.
            goals = {}
            for t in todo:
                goals[t.id] = self.proposer.propose_goals(
                    t, vocab, exemplars, self.seed_exemplars,
                    self.world.abstract(t.initial_state).objects)
            ops = planning_order(verified, candidates)
            snapshot = self.policy.copy()
            results = self._attempt(todo, ops, goals, snapshot)
            for t, r in zip(todo, results):
                report.expanded += r.expanded
                for rec in r.records:
                    st = self.stats.setdefault(rec.operator, OperatorStats())
                    st.b += 1
                    st.s += int(rec.success)
                if r.solved:
                    status[t.id] = TaskStatus(t.id, True, r.trajectory, it)
                    report.solved.append(t.id)
                    self.exemplars.append(Exemplar(
                        t.instruction,
                        tuple((a.operator.name, a.binding)
                              for a in r.high_level),
                        format_goal(goals[t.id][r.goal_index])))
                self.policy.merge(r.experiences)
            # Score and filter.
            pool = [op for op in verified if op not in protected] + candidates
            fr = score_and_filter(pool, self.stats, protected,
                                  self.cfg.tau_b, self.cfg.tau_r)
            verified, candidates = fr.verified, fr.candidates
            for oid, why in fr.rejected.items():
                self.seen_definitions[oid] = "rejected"
                report.rejected[oid] = why
            report.retained = [operator_id(o) for o in verified]
            report.candidates = [operator_id(o) for o in candidates]
            report.stats = {k: (v.b, v.s) for k, v in self.stats.items()}
            report.dictionary_size = len(self.policy)
            report.wall_time = time.perf_counter() - t0
            reports.append(report)
            if on_report is not None:
                on_report(report)
        self.status = status
        self.verified = verified
        self.candidates = candidates
        return FilterResult(verified, candidates, {}).library(
            vocab, init_lib.name), reports

    def transfer_evaluate(self, lib: OperatorLibrary,
                          dataset: Sequence[Task]) -> IterationReport:
        """Solve ``dataset`` with ``lib`` as is: goals are proposed, but no
        operators, and neither the library nor the policy changes."""
        t0 = time.perf_counter()
        tasks = sorted(dataset, key=lambda t: t.id)
        report = IterationReport(0, [t.id for t in tasks], [])
        ops = [tag_operator(op) for op in lib.operators]
        goals = {t.id: self.proposer.propose_goals(
            t, lib.vocabulary, (), self.seed_exemplars,
            self.world.abstract(t.initial_state).objects) for t in tasks}
        for t, r in zip(tasks, self._attempt(tasks, ops, goals,
                                             self.policy.copy(),
                                             record=False)):
            report.expanded += r.expanded
            if r.solved:
                report.solved.append(t.id)
        report.retained = [operator_id(o) for o in ops]
        report.dictionary_size = len(self.policy)
        report.wall_time = time.perf_counter() - t0
        return report


def _unique(ops: Sequence[Operator]) -> Tuple[Operator, ...]:
    out, seen = [], set()
    for op in ops:
        if op.key not in seen:
            seen.add(op.key)
            out.append(op)
    return tuple(out)


def run(dataset: Sequence[Task], init_lib: OperatorLibrary,
        cfg: LearnerConfig, backend: Backend,
        world: Optional[CraftWorld] = None, **kw
        ) -> Tuple[OperatorLibrary, List[IterationReport]]:
    return Learner(cfg, backend, world, **kw).run(dataset, init_lib)


def transfer_evaluate(learned_lib: OperatorLibrary, dataset: Sequence[Task],
                      cfg: LearnerConfig, backend: Backend,
                      world: Optional[CraftWorld] = None, **kw
                      ) -> IterationReport:
    return Learner(cfg, backend, world, **kw).transfer_evaluate(
        learned_lib, dataset)


def merge_libraries(*libs: OperatorLibrary, name: str = "merged"
                    ) -> OperatorLibrary:
    """Union by (name, arity); the first library wins on a clash."""
    if not libs:
        raise ValueError("nothing to merge")
    ops: Dict[Tuple[str, int], Operator] = {}
    for lib in libs:
        if lib.vocabulary != libs[0].vocabulary:
            raise SymbolicError("libraries use different vocabularies")
        for op in lib.operators:
            ops.setdefault(op.key, op)
    return OperatorLibrary(libs[0].vocabulary, tuple(ops.values()), name)
