"""Reader and canonical writer for the typed-STRIPS PDDL subset.

Grammar (case-insensitive keywords, ``;`` comments)::

    domain     ::= "(" "define" "(" "domain" NAME ")" section* ")"
    section    ::= "(" ":requirements" KEYWORD* ")"
                 | "(" ":types" typed-list ")"
                 | "(" ":predicates" ("(" NAME typed-vars ")")* ")"
                 | "(" ":action" NAME ":parameters" "(" typed-vars ")"
                       [":precondition" conj] ":effect" conj ")"
    conj       ::= "(" "and" literal* ")" | literal
    literal    ::= atom | "(" "not" atom ")"
    atom       ::= "(" NAME term* ")"
    goal       ::= "(" "exists" "(" typed-vars ")" conj ")" | conj
    typed-list ::= (NAME+ ["-" NAME])*

Conditional effects, quantified preconditions, numeric fluents, durative
actions and derived predicates are rejected with a positioned error.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

from oplearn.symbolic import ROOT_TYPE, AbstractState, Atom, GoalFormula, \
    Literal, Operator, OperatorLibrary, Predicate, SymbolicError, \
    TypeHierarchy, Vocabulary, is_variable

REQUIREMENTS = (":strips", ":typing", ":negative-preconditions")
_UNSUPPORTED = {
    "when", "forall", "or", "imply", "exists", "increase", "decrease",
    "assign", "scale-up", "scale-down", "=",
}
_UNSUPPORTED_SECTIONS = {
    ":functions", ":durative-action", ":derived", ":constants",
    ":constraints", ":process", ":event",
}


class PDDLSyntaxError(SymbolicError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        where = f"line {line}, col {col}: " if line else ""
        super().__init__(where + message)


@dataclass
class Token:
    text: str
    line: int
    col: int


class SExpr(list):
    """List of tokens / sub-expressions remembering where it opened."""
    line = 0
    col = 0


Node = Union[Token, SExpr]

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def tokenize(text: str) -> List[Token]:
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0]
        for m in _TOKEN.finditer(line):
            tokens.append(Token(m.group(0), lineno, m.start() + 1))
    return tokens


def parse_sexprs(text: str) -> List[SExpr]:
    stack: List[SExpr] = []
    top: List[SExpr] = []
    for tok in tokenize(text):
        if tok.text == "(":
            node = SExpr()
            node.line, node.col = tok.line, tok.col
            stack.append(node)
        elif tok.text == ")":
            if not stack:
                raise PDDLSyntaxError("unbalanced ')'", tok.line, tok.col)
            node = stack.pop()
            (stack[-1] if stack else top).append(node)
        else:
            if not stack:
                raise PDDLSyntaxError(f"unexpected token {tok.text!r}",
                                      tok.line, tok.col)
            stack[-1].append(Token(tok.text.lower(), tok.line, tok.col))
    if stack:
        raise PDDLSyntaxError("unclosed '('", stack[-1].line, stack[-1].col)
    return top


def _pos(node: Node) -> Tuple[int, int]:
    return node.line, node.col


def _word(node: Node, what: str) -> str:
    if not isinstance(node, Token):
        raise PDDLSyntaxError(f"expected {what}, got a list", *_pos(node))
    return node.text


def _typed_list(nodes: Sequence[Node]) -> List[Tuple[str, str, Token]]:
    out: List[Tuple[str, str, Token]] = []
    pending: List[Token] = []
    i = 0
    while i < len(nodes):
        node = nodes[i]
        if not isinstance(node, Token):
            raise PDDLSyntaxError("unexpected list in typed list", *_pos(node))
        if node.text == "-":
            if i + 1 >= len(nodes) or not pending:
                raise PDDLSyntaxError("dangling '-' in typed list",
                                      *_pos(node))
            t = _word(nodes[i + 1], "type name")
            out.extend((tok.text, t, tok) for tok in pending)
            pending = []
            i += 2
            continue
        pending.append(node)
        i += 1
    out.extend((tok.text, ROOT_TYPE, tok) for tok in pending)
    return out


def _atom(node: Node) -> Atom:
    if not isinstance(node, SExpr) or not node:
        raise PDDLSyntaxError("expected an atom", *_pos(node))
    head = _word(node[0], "predicate name")
    if head in _UNSUPPORTED:
        raise PDDLSyntaxError(f"unsupported construct {head!r}", *_pos(node))
    return Atom(head, tuple(_word(a, "term") for a in node[1:]))


def _literal(node: Node) -> Tuple[Literal, SExpr]:
    if isinstance(node, SExpr) and node and isinstance(node[0], Token) \
            and node[0].text == "not":
        if len(node) != 2:
            raise PDDLSyntaxError("'not' takes one atom", *_pos(node))
        return Literal(_atom(node[1]), False), node
    return Literal(_atom(node), True), node


def _conjunction(node: Node) -> List[Tuple[Literal, SExpr]]:
    if not isinstance(node, SExpr):
        raise PDDLSyntaxError("expected a formula", *_pos(node))
    if not node:
        return []
    if isinstance(node[0], Token) and node[0].text == "and":
        return [_literal(c) for c in node[1:]]
    return [_literal(node)]


def _check_literal(vocab: Vocabulary, lit: Literal, scope: Dict[str, str],
                   where: SExpr) -> None:
    if lit.atom.predicate not in vocab:
        raise PDDLSyntaxError(
            f"undeclared predicate {lit.atom.predicate!r}", *_pos(where))
    problem = vocab.literal_problem(lit, scope)
    if problem:
        raise PDDLSyntaxError(problem, *_pos(where))


def _parse_types(nodes) -> TypeHierarchy:
    parents: Dict[str, str] = {}
    for name, parent, tok in _typed_list(nodes):
        if name == ROOT_TYPE:
            continue
        if name in parents:
            raise PDDLSyntaxError(f"type {name!r} declared twice", tok.line,
                                  tok.col)
        parents[name] = parent
    for name, parent in parents.items():
        if parent != ROOT_TYPE and parent not in parents:
            raise PDDLSyntaxError(f"unknown type {parent!r}")
    try:
        return TypeHierarchy(parents)
    except SymbolicError as e:
        raise PDDLSyntaxError(str(e)) from None


def _parse_action(node: SExpr, vocab: Vocabulary) -> Operator:
    if len(node) < 2:
        raise PDDLSyntaxError("action without a name", *_pos(node))
    name = _word(node[1], "action name")
    fields: Dict[str, Node] = {}
    i = 2
    while i < len(node):
        key = _word(node[i], "action field")
        if key not in (":parameters", ":precondition", ":effect"):
            raise PDDLSyntaxError(f"unsupported action field {key!r}",
                                  *_pos(node[i]))
        if i + 1 >= len(node):
            raise PDDLSyntaxError(f"missing value for {key}", *_pos(node[i]))
        fields[key] = node[i + 1]
        i += 2
    params_node = fields.get(":parameters", SExpr())
    if not isinstance(params_node, SExpr):
        raise PDDLSyntaxError("parameters must be a list", *_pos(params_node))
    params = []
    for var, t, tok in _typed_list(params_node):
        if not is_variable(var):
            raise PDDLSyntaxError(f"parameter {var!r} is not a variable",
                                  tok.line, tok.col)
        if t not in vocab.types:
            raise PDDLSyntaxError(f"unknown type {t!r}", tok.line, tok.col)
        params.append((var, t))
    scope = dict(params)
    if len(scope) != len(params):
        raise PDDLSyntaxError(f"duplicate parameter in {name!r}",
                              *_pos(params_node))
    if ":effect" not in fields:
        raise PDDLSyntaxError(f"action {name!r} has no effect", *_pos(node))
    parts = {}
    for key in (":precondition", ":effect"):
        lits = _conjunction(fields[key]) if key in fields else []
        for lit, where in lits:
            _check_literal(vocab, lit, scope, where)
        parts[key] = [lit for lit, _ in lits]
    try:
        return Operator(name, tuple(params), tuple(parts[":precondition"]),
                        tuple(parts[":effect"]))
    except SymbolicError as e:
        raise PDDLSyntaxError(str(e), *_pos(node)) from None


def parse_domain(text: str) -> OperatorLibrary:
    exprs = parse_sexprs(text)
    if len(exprs) != 1:
        raise PDDLSyntaxError("expected exactly one (define ...) form",
                              *(_pos(exprs[1]) if len(exprs) > 1 else (1, 1)))
    root = exprs[0]
    if len(root) < 2 or _word(root[0], "define") != "define":
        raise PDDLSyntaxError("expected (define (domain NAME) ...)",
                              *_pos(root))
    header = root[1]
    if not isinstance(header, SExpr) or len(header) != 2 or \
            _word(header[0], "domain") != "domain":
        raise PDDLSyntaxError("expected (domain NAME)", *_pos(header))
    domain_name = _word(header[1], "domain name")
    types = TypeHierarchy()
    predicates: List[Predicate] = []
    actions: List[SExpr] = []
    for section in root[2:]:
        if not isinstance(section, SExpr) or not section:
            raise PDDLSyntaxError("expected a section", *_pos(section))
        key = _word(section[0], "section keyword")
        if key == ":requirements":
            for req in section[1:]:
                if _word(req, "requirement") not in REQUIREMENTS:
                    raise PDDLSyntaxError(
                        f"unsupported requirement {req.text!r}", *_pos(req))
        elif key == ":types":
            types = _parse_types(section[1:])
        elif key == ":predicates":
            seen = set()
            for p in section[1:]:
                if not isinstance(p, SExpr) or not p:
                    raise PDDLSyntaxError("malformed predicate", *_pos(p))
                pname = _word(p[0], "predicate name")
                if pname in seen:
                    raise PDDLSyntaxError(f"predicate {pname!r} declared "
                                          "twice", *_pos(p))
                seen.add(pname)
                sig = []
                for var, t, tok in _typed_list(p[1:]):
                    if t not in types:
                        raise PDDLSyntaxError(f"unknown type {t!r}",
                                              tok.line, tok.col)
                    sig.append(t)
                predicates.append(Predicate(pname, tuple(sig)))
        elif key == ":action":
            actions.append(section)
        elif key in _UNSUPPORTED_SECTIONS:
            raise PDDLSyntaxError(f"unsupported section {key!r}",
                                  *_pos(section))
        else:
            raise PDDLSyntaxError(f"unknown section {key!r}", *_pos(section))
    vocab = Vocabulary(types, tuple(predicates))
    ops: List[Operator] = []
    seen_keys: Dict[Tuple[str, int], SExpr] = {}
    for node in actions:
        op = _parse_action(node, vocab)
        if op.key in seen_keys:
            raise PDDLSyntaxError(
                f"duplicate operator {op.name!r}/{op.arity}", *_pos(node))
        seen_keys[op.key] = node
        ops.append(op)
    return OperatorLibrary(vocab, tuple(ops), domain_name)


# ---------------------------------------------------------------------------
# Printing


def _typed(pairs: Sequence[Tuple[str, str]]) -> str:
    return " ".join(f"{v} - {t}" for v, t in pairs)


def format_literals(lits: Sequence[Literal]) -> str:
    lits = sorted(lits, key=lambda l: (l.atom, not l.positive))
    if len(lits) == 1:
        return str(lits[0])
    return "(and" + "".join(" " + str(l) for l in lits) + ")"


def format_operator(op: Operator) -> str:
    return "\n".join([
        f"  (:action {op.name}",
        f"    :parameters ({_typed(op.params)})",
        f"    :precondition {format_literals(op.pre)}",
        f"    :effect {format_literals(op.eff)})",
    ])


def print_domain(lib: OperatorLibrary) -> str:
    vocab = lib.vocabulary
    lines = [f"(define (domain {lib.name})",
             "  (:requirements " + " ".join(REQUIREMENTS) + ")"]
    by_parent: Dict[str, List[str]] = {}
    for child, parent in vocab.types.parents.items():
        by_parent.setdefault(parent, []).append(child)
    lines.append("  (:types")
    for parent in sorted(by_parent):
        lines.append(f"    {' '.join(sorted(by_parent[parent]))} - {parent}")
    lines[-1] += ")"
    if not by_parent:
        lines[-1] = "  (:types)"
    lines.append("  (:predicates")
    for p in vocab.predicates:
        params = _typed([(f"?x{i}", t) for i, t in enumerate(p.param_types)])
        lines.append(f"    ({p.name}{' ' + params if params else ''})")
    lines[-1] += ")"
    if not vocab.predicates:
        lines[-1] = "  (:predicates)"
    for op in sorted(lib.operators, key=lambda o: (o.name, o.arity)):
        lines.append(format_operator(op))
    lines.append(")")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Goals and problems


def parse_goal(text: str, vocab: Optional[Vocabulary] = None,
               objects: Optional[Dict[str, str]] = None) -> GoalFormula:
    exprs = parse_sexprs(text)
    if len(exprs) != 1:
        raise PDDLSyntaxError("expected one goal formula")
    node = exprs[0]
    variables: List[Tuple[str, str]] = []
    if node and isinstance(node[0], Token) and node[0].text == "exists":
        if len(node) != 3 or not isinstance(node[1], SExpr):
            raise PDDLSyntaxError("malformed exists", *_pos(node))
        variables = [(v, t) for v, t, _ in _typed_list(node[1])]
        node = node[2]
    lits = _conjunction(node)
    try:
        goal = GoalFormula(tuple(variables), tuple(l for l, _ in lits))
        if vocab is not None:
            goal.check(vocab, objects)
    except SymbolicError as e:
        raise PDDLSyntaxError(str(e), *_pos(node)) from None
    return goal


def format_goal(goal: GoalFormula) -> str:
    body = format_literals(goal.literals) if goal.literals else "(and)"
    if not goal.variables:
        return body
    return f"(exists ({_typed(goal.variables)}) {body})"


def export_problem(state: AbstractState, goal: GoalFormula,
                   domain_name: str = "domain",
                   name: str = "problem") -> str:
    """Write a planning problem so external planners can cross-check."""
    objs = " ".join(f"{o} - {t}" for o, t in state.objects.items())
    init = " ".join(str(a) for a in sorted(state.atoms))
    return (f"(define (problem {name})\n  (:domain {domain_name})\n"
            f"  (:objects {objs})\n  (:init {init})\n"
            f"  (:goal {format_goal(goal)}))\n")


def parse_problem(text: str, types: Optional[TypeHierarchy] = None
                  ) -> Tuple[AbstractState, GoalFormula]:
    exprs = parse_sexprs(text)
    if len(exprs) != 1:
        raise PDDLSyntaxError("expected one (define (problem ...)) form")
    root = exprs[0]
    objects: Dict[str, str] = {}
    atoms: List[Atom] = []
    goal_node: Optional[SExpr] = None
    for section in root[2:]:
        key = _word(section[0], "section keyword")
        if key == ":objects":
            objects = {o: t for o, t, _ in _typed_list(section[1:])}
        elif key == ":init":
            atoms = [_atom(a) for a in section[1:]]
        elif key == ":goal":
            goal_node = section[1]
    if goal_node is None:
        raise PDDLSyntaxError("problem has no goal", *_pos(root))
    goal_text = _unparse(goal_node)
    return AbstractState(objects, atoms, types), parse_goal(goal_text)


def _unparse(node: Node) -> str:
    if isinstance(node, Token):
        return node.text
    return "(" + " ".join(_unparse(c) for c in node) + ")"
