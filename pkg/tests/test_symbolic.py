import random

import pytest
from hypothesis import given, settings, strategies as st

from oplearn.symbolic import AbstractState, Atom, GoalFormula, Literal, \
    Operator, OperatorLibrary, SymbolicError, TypeHierarchy, \
    applicable, applicable_actions, apply, eval_goal, goal_assignments, \
    ground, neg, pos

import oracles
from oracles import TYPES, VOCAB


def test_type_hierarchy_subtypes():
    assert TYPES.is_subtype("mug", "cup")
    assert TYPES.is_subtype("mug", "object")
    assert not TYPES.is_subtype("cup", "mug")
    assert not TYPES.is_subtype("block", "cup")
    assert TYPES.types == ("object", "block", "cup", "mug")
    with pytest.raises(SymbolicError):
        TYPES.is_subtype("plate", "object")


def test_type_hierarchy_rejects_cycles_and_unknown_parents():
    with pytest.raises(SymbolicError, match="cyclic"):
        TypeHierarchy({"a": "b", "b": "a"})
    with pytest.raises(SymbolicError, match="not declared"):
        TypeHierarchy({"a": "ghost"})


def test_operator_canonicalises_and_validates():
    op = Operator("stack", (("?a", "block"), ("?b", "block")),
                  (pos("clear", "?b"), pos("clear", "?a"), pos("clear", "?a")),
                  (pos("on", "?a", "?b"), neg("clear", "?b")))
    assert op.pre == (pos("clear", "?a"), pos("clear", "?b"))
    assert op.key == ("stack", 2)
    assert str(op) == "stack(?a, ?b)"
    op.check(VOCAB)
    with pytest.raises(SymbolicError, match="empty effect"):
        Operator("noop", (("?a", "block"),), (), ())
    with pytest.raises(SymbolicError, match="contradictory"):
        Operator("flip", (("?a", "block"),), (),
                 (pos("red", "?a"), neg("red", "?a")))
    with pytest.raises(SymbolicError, match="not in args"):
        Operator("leak", (("?a", "block"),), (), (pos("red", "?z"),))
    with pytest.raises(SymbolicError, match="constant"):
        Operator("const", (("?a", "block"),), (), (pos("on", "?a", "b1"),))


def test_operator_check_catches_type_errors():
    bad = Operator("fill", (("?b", "block"),), (), (pos("full", "?b"),))
    with pytest.raises(SymbolicError, match="not a 'cup'"):
        bad.check(VOCAB)


def test_tags_separate_variants_but_not_definitions():
    a = Operator("paint", (("?x", "object"),), (), (pos("red", "?x"),), "t1")
    b = Operator("paint", (("?x", "object"),), (), (pos("red", "?x"),), "t2")
    assert a != b
    assert a.same_definition(b)
    assert a.untagged() == b.untagged()


def test_library_rejects_duplicates():
    op = Operator("paint", (("?x", "object"),), (), (pos("red", "?x"),))
    with pytest.raises(SymbolicError, match="duplicate"):
        OperatorLibrary(VOCAB, (op, op))


def test_state_rejects_undeclared_objects():
    with pytest.raises(SymbolicError, match="undeclared object"):
        AbstractState({"b1": "block"}, [Atom("red", ("b2",))], TYPES)


def test_ground_is_injective_and_typed():
    state = AbstractState({"b1": "block", "b2": "block", "m": "mug"}, [],
                          TYPES)
    op = Operator("stack", (("?a", "block"), ("?b", "object")), (),
                  (pos("on", "?a", "?b"),))
    bindings = [a.binding for a in ground(op, state)]
    assert bindings == [("b1", "b2"), ("b1", "m"), ("b2", "b1"),
                        ("b2", "m")]


def test_apply_and_applicable():
    state = AbstractState({"b1": "block", "b2": "block"},
                          [Atom("clear", ("b1",)), Atom("clear", ("b2",))],
                          TYPES)
    op = Operator("stack", (("?a", "block"), ("?b", "block")),
                  (pos("clear", "?b"), neg("on", "?a", "?b")),
                  (pos("on", "?a", "?b"), neg("clear", "?b")))
    acts = applicable_actions(op, state)
    assert [a.binding for a in acts] == [("b1", "b2"), ("b2", "b1")]
    nxt = apply(state, acts[0])
    assert nxt.atoms == {Atom("clear", ("b1",)), Atom("on", ("b1", "b2"))}
    assert not applicable(nxt, acts[0])
    assert applicable(nxt, acts[1])
    assert str(acts[0]) == "(stack b1 b2)"


def test_goal_quantifiers_and_constants():
    state = AbstractState({"b1": "block", "m": "mug"},
                          [Atom("on", ("b1", "m")), Atom("hot", ("m",))],
                          TYPES)
    goal = GoalFormula((("?x", "block"), ("?y", "cup")),
                       (pos("on", "?x", "?y"), pos("hot", "?y")))
    assert eval_goal(state, goal)
    assert list(goal_assignments(state, goal)) == [{"?x": "b1", "?y": "m"}]
    # Goal variables may share an object.
    same = GoalFormula((("?x", "object"), ("?y", "object")),
                       (pos("hot", "?x"), pos("hot", "?y")))
    assert eval_goal(state, same)
    missing = GoalFormula((), (pos("red", "b9"),))
    assert not eval_goal(state, missing)
    assert eval_goal(state, GoalFormula((), (neg("red", "b1"),)))
    with pytest.raises(SymbolicError, match="not quantified"):
        GoalFormula((), (pos("red", "?x"),))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_applicable_actions_match_brute_force(seed):
    rng = random.Random(seed)
    objects = oracles.random_objects(rng, rng.randint(1, 5))
    state = oracles.random_state(rng, objects, rng.random())
    op = oracles.random_operator(rng, "op", max_arity=3)
    assert [a.binding for a in ground(op, state)] == \
        oracles.brute_ground(op, objects)
    assert [a.binding for a in applicable_actions(op, state)] == \
        oracles.brute_applicable(op, objects, state.atoms)
    for a in applicable_actions(op, state):
        assert apply(state, a).atoms == oracles.brute_successor(
            op, a.binding, state.atoms)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_goal_evaluation_matches_brute_force(seed):
    rng = random.Random(seed)
    objects = oracles.random_objects(rng, rng.randint(1, 5))
    state = oracles.random_state(rng, objects, rng.random())
    goal = oracles.random_goal(rng, objects)
    assert eval_goal(state, goal) == oracles.brute_eval(
        goal, objects, state.atoms)
    for m in goal_assignments(state, goal):
        assert all(Literal(l.atom.substitute(m), l.positive).holds(
            state.atoms) for l in goal.literals)
