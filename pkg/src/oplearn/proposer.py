"""Candidate decompositions, operator definitions and goals.

A ``Proposer`` turns tasks into prompts, sends them to a backend and reads
the answers back with tolerant parsers. Two backends exist: ``ReplayBackend``
serves a recorded bundle file and is fully deterministic, ``RemoteBackend``
talks to a chat-completion endpoint. Backend failures never raise; they
yield empty proposal lists and are counted on the backend.

Raw operator proposals are deliberately unvalidated. ``correct_syntax``
drops ill-formed literals, infers parameter types from predicate
signatures and rejects operators without a usable effect.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, \
    Tuple, Union

from oplearn.pddl import PDDLSyntaxError, SExpr, Token, _typed_list, \
    format_goal, format_operator, parse_sexprs
from oplearn.symbolic import AbstractState, Atom, GoalFormula, Literal, \
    Operator, OperatorLibrary, SymbolicError, Vocabulary, is_variable

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "oplearn-replay/1"


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProposerConfig:
    n_decomp: int = 4
    n_goal: int = 4
    n_def: int = 3
    n_exemplars: int = 3

    def __post_init__(self):
        for k in ("n_decomp", "n_goal", "n_def"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be at least 1")


# ---------------------------------------------------------------------------
# Proposal types


Step = Tuple[str, Tuple[str, ...]]


@dataclass(frozen=True)
class DecompositionProposal:
    task_id: str
    steps: Tuple[Step, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(
            (name, tuple(args)) for name, args in self.steps))
        if not self.steps:
            raise ValueError("a decomposition needs at least one step")


RawLiteral = Tuple[bool, str, Tuple[str, ...]]


@dataclass(frozen=True)
class RawOperatorProposal:
    """An operator exactly as proposed, before any checking."""
    name: str
    params: Tuple[Tuple[str, str], ...] = ()
    pre: Tuple[RawLiteral, ...] = ()
    eff: Tuple[RawLiteral, ...] = ()

    @property
    def fingerprint(self) -> str:
        text = json.dumps([self.name, self.params, self.pre, self.eff])
        return hashlib.sha1(text.encode()).hexdigest()[:10]


@dataclass(frozen=True)
class Rejection:
    name: str
    reason: str
    detail: str = ""

    def __bool__(self) -> bool:
        return False


@dataclass
class ProposalBundle:
    """Everything proposed during one learning iteration."""
    decompositions: Dict[str, List[DecompositionProposal]] = \
        field(default_factory=dict)
    goals: Dict[str, List[GoalFormula]] = field(default_factory=dict)
    definitions: Dict[str, List[RawOperatorProposal]] = \
        field(default_factory=dict)

    def within(self, cfg: ProposerConfig) -> bool:
        return (all(len(v) <= cfg.n_decomp
                    for v in self.decompositions.values())
                and all(len(v) <= cfg.n_goal for v in self.goals.values())
                and all(len(v) <= cfg.n_def
                        for v in self.definitions.values()))


# ---------------------------------------------------------------------------
# Tolerant readers for model output


_STEP_CALL = re.compile(r"([A-Za-z][\w-]*)\s*\(([^()]*)\)")
_STEP_SEXPR = re.compile(r"\(\s*([A-Za-z][\w-]*)((?:\s+[^\s()]+)*)\s*\)")


def parse_decomposition(text: str) -> List[Step]:
    """Read one step per line, as ``(name a b)`` or ``name(a, b)``.

    Numbering, bullets and surrounding prose are ignored.
    """
    steps: List[Step] = []
    for line in text.splitlines():
        m = _STEP_SEXPR.search(line)
        if m:
            steps.append((m.group(1).lower(),
                          tuple(a.lower() for a in m.group(2).split())))
            continue
        m = _STEP_CALL.search(line)
        if m:
            args = [a.strip().lower() for a in m.group(2).split(",")]
            steps.append((m.group(1).lower(), tuple(a for a in args if a)))
    return steps


def balanced_forms(text: str, head: str = "") -> List[str]:
    """Top-level parenthesised substrings, optionally only those whose
    first word is ``head``."""
    out = []
    depth = 0
    start = 0
    for i, ch in enumerate(text):
        if ch == "(":
            if depth == 0:
                start = i
            depth += 1
        elif ch == ")" and depth:
            depth -= 1
            if depth == 0:
                form = text[start:i + 1]
                if not head or re.match(r"\(\s*" + re.escape(head) + r"\b",
                                        form, re.I):
                    out.append(form)
    return out


def _raw_term(node) -> str:
    if isinstance(node, Token):
        return node.text
    return "(" + " ".join(_raw_term(c) for c in node) + ")"


def _raw_literals(node) -> List[RawLiteral]:
    if not isinstance(node, SExpr) or not node:
        return []
    head = node[0].text if isinstance(node[0], Token) else ""
    if head == "and":
        out: List[RawLiteral] = []
        for child in node[1:]:
            out.extend(_raw_literals(child))
        return out
    if head == "not" and len(node) == 2 and isinstance(node[1], SExpr) \
            and node[1] and isinstance(node[1][0], Token):
        inner = node[1]
        return [(False, inner[0].text,
                 tuple(_raw_term(a) for a in inner[1:]))]
    return [(True, head or _raw_term(node),
             tuple(_raw_term(a) for a in node[1:]))]


def parse_raw_operator(text: str) -> Optional[RawOperatorProposal]:
    """Read the first ``(:action ...)`` form in ``text``, or None."""
    forms = balanced_forms(text, ":action")
    if not forms:
        return None
    try:
        node = parse_sexprs(forms[0])[0]
    except PDDLSyntaxError:
        return None
    if len(node) < 2 or not isinstance(node[1], Token):
        return None
    name = node[1].text
    params: List[Tuple[str, str]] = []
    pre: List[RawLiteral] = []
    eff: List[RawLiteral] = []
    i = 2
    while i + 1 < len(node):
        key = node[i].text if isinstance(node[i], Token) else ""
        value = node[i + 1]
        if key == ":parameters" and isinstance(value, SExpr):
            try:
                params = [(v, t) for v, t, _ in _typed_list(value)]
            except PDDLSyntaxError:
                params = [(_raw_term(v), "") for v in value]
        elif key == ":precondition":
            pre = _raw_literals(value)
        elif key == ":effect":
            eff = _raw_literals(value)
        i += 2
    return RawOperatorProposal(name, tuple(params), tuple(pre), tuple(eff))


def raw_from_operator(op: Operator) -> RawOperatorProposal:
    def lits(ls):
        return tuple((l.positive, l.atom.predicate, l.atom.args) for l in ls)
    return RawOperatorProposal(op.name, op.params, lits(op.pre), lits(op.eff))


# ---------------------------------------------------------------------------
# Syntax correction


@dataclass
class _Typing:
    vocab: Vocabulary
    types: Dict[str, str]

    def try_literal(self, lit: RawLiteral, bound: Optional[set] = None
                    ) -> Optional[str]:
        """Commit ``lit``'s variable types, or explain why it is dropped."""
        positive, pred_name, args = lit
        if pred_name not in self.vocab:
            return f"unknown predicate {pred_name!r}"
        pred = self.vocab[pred_name]
        if pred.arity != len(args):
            return (f"{pred_name!r} takes {pred.arity} arguments, "
                    f"got {len(args)}")
        h = self.vocab.types
        update = {}
        for a, want in zip(args, pred.param_types):
            if not is_variable(a) or not re.fullmatch(r"\?[\w-]+", a):
                return f"{a!r} is not a variable"
            if bound is not None and a not in bound:
                return f"{a} is not quantified"
            have = update.get(a, self.types.get(a))
            if have is None or h.is_subtype(want, have):
                # Unseen, or a compatible narrowing.
                update[a] = want
            elif not h.is_subtype(have, want):
                return f"{a} is a {have}, not a {want}"
        self.types.update(update)
        return None


def correct_literals(vocab: Vocabulary, literals: Iterable[RawLiteral],
                     typing: _Typing, dropped: List[str],
                     bound: Optional[set] = None) -> List[Literal]:
    kept = []
    for lit in literals:
        problem = typing.try_literal(lit, bound)
        if problem:
            dropped.append(problem)
            continue
        kept.append(Literal(Atom(lit[1], tuple(lit[2])), lit[0]))
    return kept


def correct_syntax_report(raw: RawOperatorProposal, vocab: Vocabulary
                          ) -> Tuple[Union[Operator, Rejection], List[str]]:
    """``correct_syntax`` plus the list of dropped-literal reasons."""
    dropped: List[str] = []
    name = raw.name.lower()
    if not re.fullmatch(r"[a-z][\w-]*", name):
        return Rejection(raw.name, "bad-name", raw.name), dropped
    declared: Dict[str, str] = {}
    order: List[str] = []
    for v, t in raw.params:
        if not re.fullmatch(r"\?[\w-]+", v) or v in declared:
            continue
        order.append(v)
        declared[v] = t
    typing = _Typing(vocab, {v: t for v, t in declared.items()
                             if t in vocab.types})
    pre = correct_literals(vocab, raw.pre, typing, dropped)
    eff = correct_literals(vocab, raw.eff, typing, dropped)
    # Types can narrow while reading the effect; recheck the precondition.
    pre = [l for l in pre if not _conflicts(vocab, l, typing.types, dropped)]
    if not eff:
        return Rejection(name, "empty-effect",
                         "; ".join(dropped)), dropped
    polarity: Dict[Atom, bool] = {}
    for lit in eff:
        if polarity.setdefault(lit.atom, lit.positive) != lit.positive:
            return Rejection(name, "contradictory-effect",
                             str(lit.atom)), dropped
    used = [a for l in pre + eff for a in l.atom.args]
    params = [(v, typing.types[v]) for v in order if v in typing.types]
    for v in used:
        if v not in dict(params):
            params.append((v, typing.types[v]))
    try:
        op = Operator(name, tuple(params), tuple(pre), tuple(eff))
        op.check(vocab)
    except SymbolicError as e:
        return Rejection(name, "invalid", str(e)), dropped
    return op, dropped


def _conflicts(vocab: Vocabulary, lit: Literal, types: Mapping[str, str],
               dropped: List[str]) -> bool:
    problem = vocab.literal_problem(lit, types)
    if problem:
        dropped.append(problem)
    return problem is not None


def correct_syntax(raw: RawOperatorProposal, vocab: Vocabulary
                   ) -> Union[Operator, Rejection]:
    """Repair ``raw`` against ``vocab`` or reject it with a reason.

    Literals with an unknown predicate, a wrong arity, a non-variable
    term or a type clash are dropped. Each variable takes its declared
    type when that type exists, otherwise the type of the first literal
    that uses it; a later use may narrow it to a subtype. Rejection
    reasons: ``bad-name``, ``empty-effect``, ``contradictory-effect``.
    """
    return correct_syntax_report(raw, vocab)[0]


def correct_goal(text: str, vocab: Vocabulary,
                 objects: Optional[Mapping[str, str]] = None
                 ) -> Optional[GoalFormula]:
    """Read a goal formula, dropping literals the vocabulary rejects.

    Returns None when nothing usable is left.
    """
    forms = balanced_forms(text)
    if not forms:
        return None
    try:
        node = parse_sexprs(forms[0])[0]
    except PDDLSyntaxError:
        return None
    variables: List[Tuple[str, str]] = []
    if node and isinstance(node[0], Token) and node[0].text == "exists":
        if len(node) != 3 or not isinstance(node[1], SExpr):
            return None
        try:
            variables = [(v, t) for v, t, _ in _typed_list(node[1])
                         if t in vocab.types]
        except PDDLSyntaxError:
            return None
        node = node[2]
    bound = {v for v, _ in variables}
    typing = _Typing(vocab, dict(variables))
    kept: List[Literal] = []
    dropped: List[str] = []
    for lit in _raw_literals(node):
        args = lit[2]
        consts = [a for a in args if not is_variable(a)]
        if consts:
            # Ground literals are fine when they name known objects.
            if objects is None or any(a not in objects for a in consts):
                continue
            problem = vocab.literal_problem(
                Literal(Atom(lit[1], args), lit[0]),
                {**objects, **typing.types})
            if problem is None:
                kept.append(Literal(Atom(lit[1], args), lit[0]))
            continue
        kept.extend(correct_literals(vocab, [lit], typing, dropped, bound))
    if not kept:
        return None
    used = {a for l in kept for a in l.atom.args}
    variables = [(v, typing.types[v]) for v, _ in variables if v in used]
    return GoalFormula(tuple(variables), tuple(kept))


# ---------------------------------------------------------------------------
# Undefined operators


def extract_undefined_names(proposals: Sequence[DecompositionProposal],
                            lib: Union[OperatorLibrary, Iterable[Operator]]
                            ) -> List[Tuple[Tuple[str, int], List[Step]]]:
    """Steps whose (name, arity) no operator covers, grouped by key."""
    ops = lib.operators if isinstance(lib, OperatorLibrary) else lib
    known = {op.key for op in ops}
    usages: Dict[Tuple[str, int], List[Step]] = {}
    for prop in proposals:
        for name, args in prop.steps:
            key = (name, len(args))
            if key in known:
                continue
            usages.setdefault(key, []).append((name, args))
    return sorted(usages.items())


# ---------------------------------------------------------------------------
# Backends


class ReplayBackend:
    """Serves a recorded bundle.

    Bundle layout (JSON)::

        {"format": "oplearn-replay/1",
         "decompositions": {task_id: [[[name, arg, ...], ...], ...]},
         "goals":          {task_id: [goal_text, ...]},
         "definitions":    {operator_name: [action_text, ...]},
         "distractors":    {operator_name: [action_text, ...]}}

    ``distractors`` limits how many recorded wrong definitions are served
    per name (all by default); ``position`` puts them before ("first") or
    after ("last") the correct ones.
    """

    kind = "replay"

    def __init__(self, bundle: Mapping, distractors: Optional[int] = None,
                 position: str = "first", source: str = ""):
        if position not in ("first", "last"):
            raise ValueError("position must be 'first' or 'last'")
        fmt = bundle.get("format", BUNDLE_FORMAT)
        if fmt != BUNDLE_FORMAT:
            raise ValueError(f"unsupported bundle format {fmt!r}")
        self.bundle = bundle
        self.distractors = distractors
        self.position = position
        self.source = source
        self.calls = 0
        self.errors: List[str] = []

    @classmethod
    def load(cls, path, **kw) -> "ReplayBackend":
        with open(path) as f:
            return cls(json.load(f), source=str(path), **kw)

    def describe(self) -> dict:
        text = json.dumps(self.bundle, sort_keys=True)
        return {"kind": self.kind, "source": self.source,
                "sha256": hashlib.sha256(text.encode()).hexdigest(),
                "distractors": self.distractors, "position": self.position}

    def decompositions(self, task_id: str, prompt: str, n: int
                       ) -> List[List[Step]]:
        self.calls += 1
        out = []
        for steps in self.bundle.get("decompositions", {}).get(task_id, []):
            out.append([(s[0], tuple(s[1:])) for s in steps])
        return out[:n]

    def definitions(self, name: str, arity: int, prompt: str, n: int
                    ) -> List[str]:
        self.calls += 1
        good = list(self.bundle.get("definitions", {}).get(name, []))
        bad = list(self.bundle.get("distractors", {}).get(name, []))
        if self.distractors is not None:
            bad = bad[:self.distractors]
        texts = bad + good if self.position == "first" else good + bad
        return texts[:n]

    def goals(self, task_id: str, prompt: str, n: int) -> List[str]:
        self.calls += 1
        return list(self.bundle.get("goals", {}).get(task_id, []))[:n]


@dataclass
class RemoteConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.7
    max_tokens: int = 800
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 2.0
    api_key_env: str = "OPLEARN_API_KEY"


class RemoteBackend:
    """Chat-completion client.

    Requests are ``{"model", "messages", "temperature", "max_tokens"}``
    posted as JSON with a bearer key read from ``api_key_env``; the first
    choice's ``message.content`` is parsed. Each definition is requested
    on its own, showing the earlier answers and asking for a different
    one, since sampling alone gives little variety.
    """

    kind = "remote"

    def __init__(self, cfg: RemoteConfig = RemoteConfig(), system: str = "",
                 opener=None):
        self.cfg = cfg
        self.system = system or load_template("system").template
        self._open = opener or urllib.request.urlopen
        self.calls = 0
        self.errors: List[str] = []

    def describe(self) -> dict:
        return {"kind": self.kind, "endpoint": self.cfg.endpoint,
                "model": self.cfg.model,
                "temperature": self.cfg.temperature}

    def chat(self, prompt: str) -> Optional[str]:
        key = os.environ.get(self.cfg.api_key_env, "")
        body = json.dumps({
            "model": self.cfg.model,
            "messages": [{"role": "system", "content": self.system},
                         {"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        }).encode()
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.calls += 1
        for attempt in range(self.cfg.retries + 1):
            req = urllib.request.Request(self.cfg.endpoint, body, headers)
            try:
                with self._open(req, timeout=self.cfg.timeout) as resp:
                    data = json.loads(resp.read().decode())
                return data["choices"][0]["message"]["content"]
            except (urllib.error.URLError, OSError, ValueError, KeyError,
                    IndexError, TypeError) as e:
                log.warning("remote call failed (attempt %d): %s",
                            attempt + 1, e)
                if attempt < self.cfg.retries:
                    time.sleep(self.cfg.backoff * (2 ** attempt))
                else:
                    self.errors.append(str(e))
        return None

    def decompositions(self, task_id: str, prompt: str, n: int
                       ) -> List[List[Step]]:
        out = []
        for _ in range(n):
            text = self.chat(prompt)
            if text is None:
                break
            steps = parse_decomposition(text)
            if steps and steps not in out:
                out.append(steps)
        return out

    def definitions(self, name: str, arity: int, prompt: str, n: int
                    ) -> List[str]:
        out: List[str] = []
        for _ in range(n):
            extra = ""
            if out:
                extra = ("Earlier definitions (write a different one):\n"
                         + "\n".join(out) + "\n")
            text = self.chat(prompt.replace("$previous", extra)
                             if "$previous" in prompt else prompt + extra)
            if text is None:
                break
            forms = balanced_forms(text, ":action")
            if forms and forms[0] not in out:
                out.append(forms[0])
        return out

    def goals(self, task_id: str, prompt: str, n: int) -> List[str]:
        text = self.chat(prompt)
        if text is None:
            return []
        return balanced_forms(text)[:n]


Backend = Union[ReplayBackend, RemoteBackend]


# ---------------------------------------------------------------------------
# Prompts


def load_template(name: str) -> Template:
    text = resources.files("oplearn.prompts").joinpath(f"{name}.txt") \
        .read_text()
    return Template(text)


def render_unary(state: AbstractState) -> str:
    """Unary facts only, one object per line; free slots are summarised."""
    props: Dict[str, List[str]] = {}
    free = []
    for atom in sorted(state.atoms):
        if len(atom.args) != 1:
            continue
        if atom.predicate == "hypothetical":
            free.append(atom.args[0])
            continue
        props.setdefault(atom.args[0], []).append(atom.predicate)
    lines = [f"{o}: {', '.join(p)}" for o, p in sorted(props.items())]
    if free:
        lines.append(f"free item slots: {', '.join(free)}")
    return "\n".join(lines)


def _render_ops(ops: Iterable[Operator]) -> str:
    text = "\n".join(format_operator(op) for op in ops)
    return text or "(none yet)"


def _render_predicates(vocab: Vocabulary) -> str:
    return "\n".join(
        "(" + " ".join([p.name] + [f"?x{i} - {t}" for i, t in
                                   enumerate(p.param_types)]) + ")"
        for p in vocab.predicates)


@dataclass(frozen=True)
class Exemplar:
    """A solved task shown to the model: instruction, plan and goal."""
    instruction: str
    steps: Tuple[Step, ...] = ()
    goal: str = ""

    def as_decomposition(self) -> str:
        body = "\n".join("(" + " ".join((n,) + a) + ")" for n, a in self.steps)
        return f"Instruction: {self.instruction}\n{body}\n"

    def as_goal(self) -> str:
        return f"Instruction: {self.instruction}\n{self.goal}\n"


class Proposer:
    def __init__(self, backend: Backend, cfg: ProposerConfig = ProposerConfig(),
                 jobs: int = 1):
        self.backend = backend
        self.cfg = cfg
        self.jobs = max(1, jobs)
        self.templates = {k: load_template(k)
                          for k in ("decompose", "define", "goals")}

    def _map(self, fn, items: Sequence) -> List:
        if self.jobs == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.jobs) as pool:
            return list(pool.map(fn, items))

    def propose_decompositions(self, task, state: AbstractState,
                               lib: OperatorLibrary,
                               solved_exemplars: Sequence[Exemplar] = ()
                               ) -> List[DecompositionProposal]:
        examples = "".join(e.as_decomposition() for e in solved_exemplars)
        prompt = self.templates["decompose"].safe_substitute(
            state=render_unary(state), operators=_render_ops(lib.operators),
            examples=examples, instruction=task.instruction)
        try:
            raw = self.backend.decompositions(task.id, prompt,
                                              self.cfg.n_decomp)
        except Exception as e:  # degraded mode: never abort learning
            log.warning("decomposition request failed: %s", e)
            self.backend.errors.append(str(e))
            return []
        return [DecompositionProposal(task.id, tuple(steps))
                for steps in raw if steps][:self.cfg.n_decomp]

    def propose_operator_definitions(
            self, name_usages: Sequence[Tuple[Tuple[str, int], List[Step]]],
            vocabulary: Vocabulary, lib: OperatorLibrary
    ) -> Dict[Tuple[str, int], List[RawOperatorProposal]]:
        def one(item):
            (name, arity), usages = item
            prompt = self.templates["define"].safe_substitute(
                types=", ".join(vocabulary.types.types),
                predicates=_render_predicates(vocabulary),
                operators=_render_ops(lib.operators), name=name,
                usages="\n".join("(" + " ".join((n,) + a) + ")"
                                 for n, a in usages[:5]))
            try:
                texts = self.backend.definitions(name, arity, prompt,
                                                 self.cfg.n_def)
            except Exception as e:
                log.warning("definition request failed: %s", e)
                self.backend.errors.append(str(e))
                return []
            out = []
            for t in texts:
                raw = parse_raw_operator(t)
                if raw is not None and raw not in out:
                    out.append(raw)
            return out[:self.cfg.n_def]

        results = self._map(one, list(name_usages))
        return {key: r for (key, _), r in zip(name_usages, results)}

    def propose_goals(self, task, vocabulary: Vocabulary,
                      solved_exemplars: Sequence[Exemplar] = (),
                      seed_exemplars: Sequence[Exemplar] = (),
                      objects: Optional[Mapping[str, str]] = None
                      ) -> List[GoalFormula]:
        examples = "".join(e.as_goal() for e in
                           list(seed_exemplars) + list(solved_exemplars))
        prompt = self.templates["goals"].safe_substitute(
            predicates=_render_predicates(vocabulary), examples=examples,
            instruction=task.instruction)
        try:
            texts = self.backend.goals(task.id, prompt, self.cfg.n_goal)
        except Exception as e:
            log.warning("goal request failed: %s", e)
            self.backend.errors.append(str(e))
            return []
        out: List[GoalFormula] = []
        for t in texts:
            g = correct_goal(t, vocabulary, objects)
            if g is not None and g not in out:
                out.append(g)
        return out[:self.cfg.n_goal]

