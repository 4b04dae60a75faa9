"""Curated replay bundles for hermetic learning runs.

The content stands in for a language model that knows the recipe book's
vocabulary: decompositions are read off the instruction and the observable
initial state, operator definitions are written per recipe, and each name
can carry distractor definitions of the kinds a real model produces
(a missing tool precondition, or an effect the world cannot deliver).
Nothing here reads a task's hidden goal.
"""
from __future__ import annotations

import re
from typing import Dict, List, Optional, Sequence, Tuple

from oplearn.benchmarks import _Chainer, goal_for
from oplearn.craftworld import CraftingRule, CraftWorld, MiningRule, \
    RecipeBook, Task
from oplearn.pddl import format_goal


def op_name(verb: str, kind: str) -> str:
    return f"{verb}-{kind.replace('_', '-')}"


def _action(name: str, params: Sequence[Tuple[str, str]],
            pre: Sequence[str], eff: Sequence[str]) -> str:
    ps = " ".join(f"{v} - {t}" for v, t in params)
    return (f"(:action {name}\n  :parameters ({ps})\n"
            f"  :precondition (and {' '.join(pre)})\n"
            f"  :effect (and {' '.join(eff)}))")


def mining_definition(rule: MiningRule, variant: str = "correct") -> str:
    params = [("?r", rule.resource), ("?t", "item"), ("?o", "item")]
    pre = [f"({rule.resource} ?r)", "(inventory ?t)", f"({rule.tool} ?t)",
           "(hypothetical ?o)"]
    eff = ["(inventory ?o)", f"({rule.output} ?o)", "(not (hypothetical ?o))"]
    if not rule.renewable:
        eff.append(f"(not ({rule.resource} ?r))")
    if variant == "missing-tool":
        params = [p for p in params if p[0] != "?t"]
        pre = [p for p in pre if "?t" not in p]
    elif variant == "wrong-effect":
        # The tool is used up, which this world never does.
        eff.append("(not (inventory ?t))")
    elif variant != "correct":
        raise ValueError(variant)
    return _action(op_name("mine", rule.output), params, pre, eff)


def crafting_definition(rule: CraftingRule, variant: str = "correct") -> str:
    params = []
    pre = []
    eff = []
    for n, kind in enumerate(rule.inputs):
        v = f"?i{n}"
        params.append((v, "item"))
        pre += [f"(inventory {v})", f"({kind} {v})"]
        eff += [f"(not (inventory {v}))", f"(not ({kind} {v}))"]
    params.append(("?o", "item"))
    pre.append("(hypothetical ?o)")
    eff = ["(inventory ?o)", f"({rule.output} ?o)",
           "(not (hypothetical ?o))"] + eff
    if rule.station:
        params.append(("?s", rule.station))
        pre.append(f"({rule.station} ?s)")
    if variant == "missing-tool":
        # Forgets an ingredient.
        first = "?i0"
        params = [p for p in params if p[0] != first]
        pre = [p for p in pre if first not in p]
        eff = [e for e in eff if first not in e]
    elif variant == "wrong-effect":
        # The output also keeps the kind of its first ingredient.
        eff.append(f"({rule.inputs[0]} ?o)")
    elif variant != "correct":
        raise ValueError(variant)
    return _action(op_name("craft", rule.output), params, pre, eff)


def definitions(recipes: RecipeBook, variant: str = "correct"
                ) -> Dict[str, str]:
    out = {}
    for r in recipes.mining:
        out[op_name("mine", r.output)] = mining_definition(r, variant)
    for r in recipes.crafting:
        out[op_name("craft", r.output)] = crafting_definition(r, variant)
    return out


def reference_domain(recipes: RecipeBook, names: Optional[Sequence[str]] = None
                     ) -> str:
    """Domain text holding the correct operator for each recipe."""
    from oplearn.pddl import print_domain, parse_domain
    world = CraftWorld(recipes)
    defs = definitions(recipes)
    if names is not None:
        defs = {k: v for k, v in defs.items() if k in names}
    text = _domain_header(world) + "\n".join(defs[k] for k in sorted(defs)) \
        + "\n)\n"
    return print_domain(parse_domain(text))


def _domain_header(world: CraftWorld) -> str:
    from oplearn.pddl import print_domain
    from oplearn.symbolic import OperatorLibrary
    text = print_domain(OperatorLibrary(world.vocabulary, (), "craftworld"))
    return text.rstrip().rstrip(")") + "\n"


# ---------------------------------------------------------------------------
# Reading instructions


def parse_instruction(text: str, recipes: RecipeBook) -> List[str]:
    """Item kinds requested by a generated instruction."""
    names = {recipes.name(k): k for k in recipes.item_kinds}
    kinds = []
    for part in re.split(r"\band\b", text.lower()):
        part = re.sub(r"^\s*(mine|craft)\s+", "", part.strip())
        part = re.sub(r"^(an?|the)\s+", "", part).strip()
        if part not in names:
            raise ValueError(f"cannot read instruction {text!r}")
        kinds.append(names[part])
    return kinds


def decomposition(task: Task, recipes: RecipeBook) -> List[List]:
    """A plausible step list for ``task`` built from observable state."""
    world = CraftWorld(recipes)
    kinds = parse_instruction(task.instruction, recipes)
    chain = _Chainer(world, task.initial_state)
    steps: List[List] = []
    for k in kinds:
        _record(chain, k, steps)
    return steps


def _record(chain: _Chainer, kind: str, steps: List[List]) -> None:
    start = len(chain.stages)
    chain.obtain(kind)
    for (verb, k), args in zip(chain.stages[start:],
                               chain.arguments[start:]):
        steps.append([op_name(verb, k)] + list(args))


def build_bundle(tasks: Sequence[Task], recipes: RecipeBook,
                 distractors: int = 2, noisy_goals: bool = True) -> dict:
    """Replay bundle for ``tasks`` with ``distractors`` wrong definitions
    recorded per operator name."""
    bundle = {"format": "oplearn-replay/1", "decompositions": {},
              "goals": {}, "definitions": {}, "distractors": {}}
    for t in tasks:
        steps = decomposition(t, recipes)
        bundle["decompositions"][t.id] = [steps]
        kinds = parse_instruction(t.instruction, recipes)
        goals = [format_goal(goal_for(kinds))]
        if noisy_goals:
            # A model that invents a predicate for the target.
            goals.insert(0, "(exists (?x - item) (and (inventory ?x) "
                            f"(is-{kinds[0].replace('_', '-')} ?x)))")
        bundle["goals"][t.id] = goals
    correct = definitions(recipes)
    wrong = [definitions(recipes, "missing-tool"),
             definitions(recipes, "wrong-effect")]
    for name in sorted(correct):
        bundle["definitions"][name] = [correct[name]]
        bundle["distractors"][name] = [w[name] for w in wrong][:distractors]
    return bundle
