"""Typed STRIPS representation: predicates, atoms, operators, states and goals.

Terms are plain strings. A term starting with ``?`` is a variable, anything
else is a constant object name. All structures are immutable.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, \
    Optional, Sequence, Tuple

ROOT_TYPE = "object"


class SymbolicError(ValueError):
    """Raised when a symbolic structure violates its invariants."""


def is_variable(term: str) -> bool:
    return term.startswith("?")


class TypeHierarchy:
    """Single-parent type tree rooted at ``object``."""

    def __init__(self, parents: Optional[Mapping[str, str]] = None):
        parents = dict(parents or {})
        parents.pop(ROOT_TYPE, None)
        for child, parent in parents.items():
            if parent != ROOT_TYPE and parent not in parents:
                raise SymbolicError(f"type {parent!r} (parent of {child!r}) "
                                    "is not declared")
        # Walk every chain to the root to catch cycles.
        for child in parents:
            seen = {child}
            cur = parents[child]
            while cur != ROOT_TYPE:
                if cur in seen:
                    raise SymbolicError(f"cyclic type hierarchy at {cur!r}")
                seen.add(cur)
                cur = parents[cur]
        self._parents = parents
        self._ancestors: Dict[str, FrozenSet[str]] = {}
        for t in self.types:
            chain = [t]
            while chain[-1] != ROOT_TYPE:
                chain.append(parents[chain[-1]])
            self._ancestors[t] = frozenset(chain)

    @property
    def types(self) -> Tuple[str, ...]:
        return (ROOT_TYPE,) + tuple(sorted(self._parents))

    @property
    def parents(self) -> Dict[str, str]:
        return dict(self._parents)

    def __contains__(self, type_name: str) -> bool:
        return type_name == ROOT_TYPE or type_name in self._parents

    def is_subtype(self, child: str, parent: str) -> bool:
        anc = self._ancestors.get(child)
        if anc is None:
            raise SymbolicError(f"unknown type {child!r}")
        return parent in anc

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TypeHierarchy) and \
            self._parents == other._parents

    def __hash__(self) -> int:
        return hash(tuple(sorted(self._parents.items())))

    def __repr__(self) -> str:
        return f"TypeHierarchy({self._parents!r})"


@dataclass(frozen=True, order=True)
class Predicate:
    name: str
    param_types: Tuple[str, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.param_types)


@dataclass(frozen=True, order=True)
class Atom:
    predicate: str
    args: Tuple[str, ...] = ()

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate,) + self.args) + ")"

    def substitute(self, binding: Mapping[str, str]) -> "Atom":
        return Atom(self.predicate,
                    tuple(binding.get(a, a) for a in self.args))

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(a for a in self.args if is_variable(a))


@dataclass(frozen=True, order=True)
class Literal:
    atom: Atom
    positive: bool = True

    def __str__(self) -> str:
        return str(self.atom) if self.positive else f"(not {self.atom})"

    def substitute(self, binding: Mapping[str, str]) -> "Literal":
        return Literal(self.atom.substitute(binding), self.positive)

    def negate(self) -> "Literal":
        return Literal(self.atom, not self.positive)

    def holds(self, atoms: FrozenSet[Atom]) -> bool:
        return (self.atom in atoms) == self.positive


def pos(predicate: str, *args: str) -> Literal:
    return Literal(Atom(predicate, tuple(args)), True)


def neg(predicate: str, *args: str) -> Literal:
    return Literal(Atom(predicate, tuple(args)), False)


@dataclass(frozen=True)
class Vocabulary:
    """Predicate signatures plus the type hierarchy they are typed over."""
    types: TypeHierarchy
    predicates: Tuple[Predicate, ...]

    def __post_init__(self):
        names = [p.name for p in self.predicates]
        if len(set(names)) != len(names):
            raise SymbolicError("duplicate predicate name in vocabulary")
        for p in self.predicates:
            for t in p.param_types:
                if t not in self.types:
                    raise SymbolicError(
                        f"predicate {p.name!r} uses unknown type {t!r}")
        object.__setattr__(self, "predicates",
                           tuple(sorted(self.predicates)))
        object.__setattr__(self, "_by_name",
                           {p.name: p for p in self.predicates})

    def __getitem__(self, name: str) -> Predicate:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def literal_problem(self, lit: Literal,
                        var_types: Mapping[str, str]) -> Optional[str]:
        """Describe why ``lit`` is ill-formed, or None if it is fine."""
        pred = self._by_name.get(lit.atom.predicate)
        if pred is None:
            return f"undeclared predicate {lit.atom.predicate!r}"
        if pred.arity != len(lit.atom.args):
            return (f"predicate {pred.name!r} expects {pred.arity} "
                    f"arguments, got {len(lit.atom.args)}")
        for arg, want in zip(lit.atom.args, pred.param_types):
            have = var_types.get(arg)
            if have is None:
                return f"unbound term {arg!r} in {lit}"
            if not self.types.is_subtype(have, want):
                return f"{arg!r} of type {have!r} is not a {want!r} in {lit}"
        return None


@dataclass(frozen=True)
class Operator:
    """Lifted action schema. ``tag`` separates candidate variants that
    share a name; it is never printed."""
    name: str
    params: Tuple[Tuple[str, str], ...]
    pre: Tuple[Literal, ...]
    eff: Tuple[Literal, ...]
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(tuple(p)
                                                 for p in self.params))
        object.__setattr__(self, "pre", tuple(sorted(set(self.pre))))
        object.__setattr__(self, "eff", tuple(sorted(set(self.eff))))
        names = [v for v, _ in self.params]
        if len(set(names)) != len(names):
            raise SymbolicError(f"operator {self.name!r}: duplicate parameter")
        for v in names:
            if not is_variable(v):
                raise SymbolicError(
                    f"operator {self.name!r}: parameter {v!r} is not a "
                    "variable")
        declared = set(names)
        for lit in self.pre + self.eff:
            for a in lit.atom.args:
                if not is_variable(a):
                    raise SymbolicError(
                        f"operator {self.name!r}: constant {a!r} in {lit}")
                if a not in declared:
                    raise SymbolicError(
                        f"operator {self.name!r}: variable {a} not in args")
        if not self.eff:
            raise SymbolicError(f"operator {self.name!r}: empty effect")
        polarity: Dict[Atom, bool] = {}
        for lit in self.eff:
            if polarity.setdefault(lit.atom, lit.positive) != lit.positive:
                raise SymbolicError(f"operator {self.name!r}: contradictory "
                                    f"effect on {lit.atom}")

    @property
    def arity(self) -> int:
        return len(self.params)

    @property
    def key(self) -> Tuple[str, int]:
        return (self.name, self.arity)

    @property
    def var_types(self) -> Dict[str, str]:
        return dict(self.params)

    def untagged(self) -> "Operator":
        return Operator(self.name, self.params, self.pre, self.eff)

    def same_definition(self, other: "Operator") -> bool:
        return self.untagged() == other.untagged()

    def check(self, vocab: Vocabulary) -> None:
        vt = self.var_types
        for _, t in self.params:
            if t not in vocab.types:
                raise SymbolicError(
                    f"operator {self.name!r}: unknown type {t!r}")
        for lit in self.pre + self.eff:
            problem = vocab.literal_problem(lit, vt)
            if problem:
                raise SymbolicError(f"operator {self.name!r}: {problem}")

    def __str__(self) -> str:
        return f"{self.name}({', '.join(v for v, _ in self.params)})"


@dataclass(frozen=True)
class OperatorLibrary:
    vocabulary: Vocabulary
    operators: Tuple[Operator, ...] = ()
    name: str = "domain"

    def __post_init__(self):
        ops = tuple(sorted(self.operators, key=lambda o: (o.name, o.arity)))
        seen = set()
        for op in ops:
            if op.key in seen:
                raise SymbolicError(
                    f"duplicate operator {op.name!r}/{op.arity}")
            seen.add(op.key)
            op.check(self.vocabulary)
        object.__setattr__(self, "operators", ops)

    def __contains__(self, key: Tuple[str, int]) -> bool:
        return any(op.key == key for op in self.operators)

    def get(self, name: str, arity: int) -> Optional[Operator]:
        for op in self.operators:
            if op.key == (name, arity):
                return op
        return None

    def with_operators(self, ops: Iterable[Operator]) -> "OperatorLibrary":
        return OperatorLibrary(self.vocabulary, tuple(ops), self.name)

    def __len__(self) -> int:
        return len(self.operators)


class AbstractState:
    """Closed-world set of ground atoms over typed objects."""

    __slots__ = ("objects", "atoms", "types", "_hash")

    def __init__(self, objects: Mapping[str, str], atoms: Iterable[Atom],
                 types: Optional[TypeHierarchy] = None):
        self.objects: Dict[str, str] = dict(sorted(objects.items()))
        self.atoms: FrozenSet[Atom] = frozenset(atoms)
        self.types = types if types is not None else _flat_types(
            self.objects.values())
        for atom in self.atoms:
            for a in atom.args:
                if a not in self.objects:
                    raise SymbolicError(f"atom {atom} mentions undeclared "
                                        f"object {a!r}")
        self._hash = hash(self.atoms)

    def with_atoms(self, atoms: Iterable[Atom]) -> "AbstractState":
        new = AbstractState.__new__(AbstractState)
        new.objects = self.objects
        new.atoms = frozenset(atoms)
        new.types = self.types
        new._hash = hash(new.atoms)
        return new

    def objects_of_type(self, type_name: str) -> List[str]:
        return [o for o, t in self.objects.items()
                if self.types.is_subtype(t, type_name)]

    def __contains__(self, atom: Atom) -> bool:
        return atom in self.atoms

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AbstractState) and \
            self._hash == other._hash and self.atoms == other.atoms and \
            self.objects == other.objects

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        body = " ".join(str(a) for a in sorted(self.atoms))
        return f"AbstractState({len(self.objects)} objects; {body})"


def _flat_types(type_names: Iterable[str]) -> TypeHierarchy:
    return TypeHierarchy({t: ROOT_TYPE for t in type_names if t != ROOT_TYPE})


@dataclass(frozen=True)
class GroundAction:
    operator: Operator
    binding: Tuple[str, ...]

    @property
    def mapping(self) -> Dict[str, str]:
        return {v: o for (v, _), o in zip(self.operator.params, self.binding)}

    @property
    def pre(self) -> Tuple[Literal, ...]:
        m = self.mapping
        return tuple(lit.substitute(m) for lit in self.operator.pre)

    @property
    def eff(self) -> Tuple[Literal, ...]:
        m = self.mapping
        return tuple(lit.substitute(m) for lit in self.operator.eff)

    def sort_key(self) -> Tuple:
        return (self.operator.name, self.operator.tag, self.binding)

    def __str__(self) -> str:
        return "(" + " ".join((self.operator.name,) + self.binding) + ")"


@dataclass(frozen=True)
class GoalFormula:
    """Existentially quantified conjunction of literals."""
    variables: Tuple[Tuple[str, str], ...]
    literals: Tuple[Literal, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables",
                           tuple(tuple(v) for v in self.variables))
        object.__setattr__(self, "literals", tuple(self.literals))
        bound = {v for v, _ in self.variables}
        for lit in self.literals:
            for a in lit.atom.args:
                if is_variable(a) and a not in bound:
                    raise SymbolicError(f"goal variable {a} is not quantified")

    @property
    def constants(self) -> FrozenSet[str]:
        return frozenset(a for lit in self.literals for a in lit.atom.args
                         if not is_variable(a))

    def check(self, vocab: Vocabulary,
              objects: Optional[Mapping[str, str]] = None) -> None:
        vt = dict(self.variables)
        for t in vt.values():
            if t not in vocab.types:
                raise SymbolicError(f"goal uses unknown type {t!r}")
        for lit in self.literals:
            pred = vocab[lit.atom.predicate] \
                if lit.atom.predicate in vocab else None
            if pred is None:
                raise SymbolicError(
                    f"undeclared predicate {lit.atom.predicate!r}")
            if pred.arity != len(lit.atom.args):
                raise SymbolicError(f"arity mismatch in {lit}")
            if objects is not None:
                scope = {**objects, **vt}
                problem = vocab.literal_problem(lit, scope)
                if problem:
                    raise SymbolicError(problem)


# ---------------------------------------------------------------------------
# Semantics


def ground(op: Operator, state: AbstractState) -> List[GroundAction]:
    """All type-correct injective bindings of ``op`` over ``state``."""
    domains = [state.objects_of_type(t) for _, t in op.params]
    out = []
    for combo in itertools.product(*domains):
        if len(set(combo)) == len(combo):
            out.append(GroundAction(op, tuple(combo)))
    out.sort(key=lambda a: a.binding)
    return out


def applicable(state: AbstractState, action: GroundAction) -> bool:
    atoms = state.atoms
    return all(lit.holds(atoms) for lit in action.pre)


def apply(state: AbstractState, action: GroundAction) -> AbstractState:
    """Delete-then-add successor. Raises if the precondition fails."""
    if not applicable(state, action):
        raise SymbolicError(f"precondition of {action} violated")
    return apply_effects(state, action.eff)


def apply_effects(state: AbstractState,
                  eff: Sequence[Literal]) -> AbstractState:
    atoms = set(state.atoms)
    for lit in eff:
        if not lit.positive:
            atoms.discard(lit.atom)
    for lit in eff:
        if lit.positive:
            atoms.add(lit.atom)
    return state.with_atoms(atoms)


def _index(atoms: Iterable[Atom]) -> Dict[str, List[Tuple[str, ...]]]:
    idx: Dict[str, List[Tuple[str, ...]]] = {}
    for atom in atoms:
        idx.setdefault(atom.predicate, []).append(atom.args)
    return idx


def match_literals(literals: Sequence[Literal], var_types: Mapping[str, str],
                   state: AbstractState, injective: bool = False,
                   allowed: Optional[Mapping[str, Sequence[str]]] = None,
                   index: Optional[Dict[str, List[Tuple[str, ...]]]] = None
                   ) -> Iterator[Dict[str, str]]:
    """Enumerate bindings of ``var_types`` satisfying every literal.

    Positive literals drive a backtracking join over state atoms; variables
    not mentioned by any positive literal are enumerated over typed
    objects. ``allowed`` narrows the candidate objects per variable.
    """
    if index is None:
        index = _index(state.atoms)
    positives = [l for l in literals if l.positive]
    negatives = [l for l in literals if not l.positive]
    positives.sort(key=lambda l: len(index.get(l.atom.predicate, ())))
    domain_cache: Dict[str, List[str]] = {}

    def domain(var: str) -> List[str]:
        if var not in domain_cache:
            objs = state.objects_of_type(var_types[var])
            if allowed is not None and var in allowed:
                keep = set(allowed[var])
                objs = [o for o in objs if o in keep]
            domain_cache[var] = objs
        return domain_cache[var]

    def type_ok(var: str, obj: str) -> bool:
        t = state.objects.get(obj)
        if t is None or not state.types.is_subtype(t, var_types[var]):
            return False
        if allowed is not None and var in allowed:
            return obj in allowed[var]
        return True

    free_vars = [v for v in var_types]

    def extend(i: int, binding: Dict[str, str]) -> Iterator[Dict[str, str]]:
        if i == len(positives):
            rest = [v for v in free_vars if v not in binding]
            yield from fill(rest, 0, binding)
            return
        lit = positives[i]
        for args in index.get(lit.atom.predicate, ()):
            if len(args) != len(lit.atom.args):
                continue
            new = dict(binding)
            ok = True
            for term, obj in zip(lit.atom.args, args):
                if is_variable(term):
                    cur = new.get(term)
                    if cur is None:
                        if not type_ok(term, obj):
                            ok = False
                            break
                        if injective and obj in new.values():
                            ok = False
                            break
                        new[term] = obj
                    elif cur != obj:
                        ok = False
                        break
                elif term != obj:
                    ok = False
                    break
            if ok:
                yield from extend(i + 1, new)

    def fill(rest: List[str], j: int,
             binding: Dict[str, str]) -> Iterator[Dict[str, str]]:
        if j == len(rest):
            if all(lit.substitute(binding).atom not in state.atoms
                   for lit in negatives):
                yield binding
            return
        var = rest[j]
        used = set(binding.values()) if injective else ()
        for obj in domain(var):
            if obj in used:
                continue
            binding[var] = obj
            yield from fill(rest, j + 1, binding)
            del binding[var]

    for b in extend(0, {}):
        yield dict(b)


def applicable_actions(op: Operator, state: AbstractState,
                       allowed: Optional[Mapping[str, Sequence[str]]] = None,
                       index=None) -> List[GroundAction]:
    """Ground actions of ``op`` applicable in ``state``, lexicographic.

    Equivalent to filtering ``ground(op, state)`` with ``applicable``.
    """
    names = [v for v, _ in op.params]
    out = {tuple(b[v] for v in names)
           for b in match_literals(op.pre, op.var_types, state,
                                   injective=True, allowed=allowed,
                                   index=index)}
    return [GroundAction(op, b) for b in sorted(out)]


def eval_goal(state: AbstractState, goal: GoalFormula) -> bool:
    for _ in goal_assignments(state, goal):
        return True
    return False


def goal_assignments(state: AbstractState,
                     goal: GoalFormula) -> Iterator[Dict[str, str]]:
    for c in goal.constants:
        if c not in state.objects:
            return
    yield from match_literals(goal.literals, dict(goal.variables), state)
