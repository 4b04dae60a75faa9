import random

import pytest

from oplearn.planner import BudgetExhausted, MalformedGoal, SearchBudget, \
    Unreachable, find_invalid_step, format_trace, heuristic, plan, \
    symmetry_classes, validate
from oplearn.symbolic import AbstractState, Atom, GoalFormula, Operator, \
    OperatorLibrary, neg, pos

import oracles
from oracles import TYPES, VOCAB

STACK = Operator("stack", (("?a", "block"), ("?b", "block")),
                 (pos("clear", "?a"), pos("clear", "?b")),
                 (pos("on", "?a", "?b"), neg("clear", "?b")))
PAINT = Operator("paint", (("?x", "object"),), (neg("red", "?x"),),
                 (pos("red", "?x"),))


def blocks(n, atoms=()):
    objects = {f"b{i}": "block" for i in range(n)}
    clear = [Atom("clear", (o,)) for o in objects]
    return AbstractState(objects, clear + list(atoms), TYPES)


def tower_goal(n):
    lits = tuple(pos("on", f"b{i}", f"b{i + 1}") for i in range(n - 1))
    return GoalFormula((), lits)


def test_plan_builds_a_tower():
    start = blocks(3)
    goal = GoalFormula((), (pos("on", "b0", "b1"), pos("on", "b1", "b2")))
    p = plan(start, goal, [STACK])
    assert validate(p, start, goal)
    assert [str(a) for a in p] == ["(stack b0 b1)", "(stack b1 b2)"] or \
        [str(a) for a in p] == ["(stack b1 b2)", "(stack b0 b1)"]
    assert len(p.states) == len(p)


def test_goal_already_true_gives_empty_plan():
    start = blocks(1, [Atom("red", ("b0",))])
    p = plan(start, GoalFormula((), (pos("red", "b0"),)), [PAINT])
    assert len(p) == 0


def test_unreachable_and_budget():
    start = blocks(2)
    goal = GoalFormula((), (pos("full", "b0"),))
    with pytest.raises(MalformedGoal):
        plan(start, goal, OperatorLibrary(VOCAB, (STACK,)))
    hot = GoalFormula((("?m", "mug"),), (pos("hot", "?m"),))
    with pytest.raises(Unreachable):
        plan(start, hot, [STACK, PAINT])
    with pytest.raises(BudgetExhausted):
        plan(blocks(5), tower_goal(5), [STACK], SearchBudget(max_nodes=2))
    with pytest.raises(MalformedGoal, match="unknown object"):
        plan(start, GoalFormula((), (pos("red", "b9"),)), [PAINT])
    with pytest.raises(ValueError):
        SearchBudget(0)


def test_existential_goals_pick_any_object():
    start = blocks(4)
    goal = GoalFormula((("?x", "block"), ("?y", "block")),
                       (pos("on", "?x", "?y"), pos("red", "?y")))
    p = plan(start, goal, [STACK, PAINT])
    assert validate(p, start, goal)
    assert len(p) == 2


def test_symmetry_classes_group_interchangeable_objects():
    start = blocks(3, [Atom("red", ("b2",))])
    classes = symmetry_classes(start)
    assert classes["b0"] == ["b0", "b1"]
    assert "b2" not in classes
    assert "b0" not in symmetry_classes(start, frozenset({"b0"}))
    linked = blocks(3, [Atom("on", ("b0", "b1"))])
    assert symmetry_classes(linked) == {}


def test_symmetry_pruning_preserves_verdicts():
    rng = random.Random(11)
    for _ in range(150):
        state, goal, ops = oracles.random_instance(rng, max_objects=5,
                                                   max_ops=5)
        verdicts = []
        for sym in (True, False):
            try:
                p = plan(state, goal, ops, use_symmetry=sym)
                assert validate(p, state, goal)
                verdicts.append(True)
            except Unreachable:
                verdicts.append(False)
        assert verdicts[0] == verdicts[1]


def test_heuristic_is_zero_exactly_at_goal():
    start = blocks(3)
    goal = tower_goal(3)
    assert heuristic(start, goal) == 2
    assert heuristic(start, goal, [STACK], "additive") >= 2
    p = plan(start, goal, [STACK])
    assert heuristic(p.states[-1], goal, [STACK], "additive") == 0
    with pytest.raises(ValueError):
        heuristic(start, goal, [STACK], "magic")


def test_goal_count_heuristic_also_plans():
    start = blocks(4)
    p = plan(start, tower_goal(4), [STACK], heuristic_mode="goal-count")
    assert validate(p, start, tower_goal(4))


def test_find_invalid_step():
    start = blocks(2)
    goal = tower_goal(2)
    p = plan(start, goal, [STACK])
    assert find_invalid_step(p.steps, start, goal) is None
    twice = p.steps + p.steps
    assert find_invalid_step(twice, start, goal) == 1
    assert find_invalid_step((), start, goal) == 0
    assert not validate((), start, goal)


def test_search_is_deterministic_and_traceable():
    start = blocks(4)
    trace = []
    a = plan(start, tower_goal(4), [STACK, PAINT], trace=trace)
    b = plan(start, tower_goal(4), [STACK, PAINT])
    assert a.steps == b.steps
    assert trace and "expanded" in trace[0]
    assert format_trace(trace).count("\n") == len(trace)


def test_negative_preconditions_block_actions():
    start = blocks(1, [Atom("red", ("b0",))])
    goal = GoalFormula((), (pos("red", "b0"), pos("clear", "b0")))
    assert len(plan(start, goal, [PAINT])) == 0
    unpaint = Operator("strip", (("?x", "object"),), (pos("red", "?x"),),
                       (neg("red", "?x"), neg("clear", "?x")))
    goal2 = GoalFormula((), (neg("clear", "b0"),))
    p = plan(start, goal2, [unpaint])
    assert [str(s) for s in p] == ["(strip b0)"]
