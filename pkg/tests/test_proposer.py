import io
import json
import urllib.error

import pytest

from oplearn.benchmarks import generate_benchmark
from oplearn.bundles import build_bundle
from oplearn.craftworld import CraftWorld, EnvConfig
from oplearn.proposer import DecompositionProposal, Exemplar, Proposer, \
    ProposalBundle, ProposerConfig, RawOperatorProposal, Rejection, \
    RemoteBackend, RemoteConfig, ReplayBackend, balanced_forms, \
    correct_goal, correct_syntax, extract_undefined_names, load_template, \
    parse_decomposition, parse_raw_operator, raw_from_operator, render_unary
from oplearn.symbolic import OperatorLibrary


@pytest.fixture(scope="module")
def world():
    return CraftWorld(EnvConfig().recipes)


@pytest.fixture(scope="module")
def tasks():
    return generate_benchmark(EnvConfig(), "crafting", 4)[0]


def test_parse_decomposition_is_tolerant():
    text = """Here is the plan:
    1. (mine-wood tree_0 i00 i02)
    2. craft-stick(i02, i03)
    - (Craft-Sword i03 i04 i05 table_0)
    done."""
    assert parse_decomposition(text) == [
        ("mine-wood", ("tree_0", "i00", "i02")),
        ("craft-stick", ("i02", "i03")),
        ("craft-sword", ("i03", "i04", "i05", "table_0")),
    ]
    assert parse_decomposition("no steps here") == []
    with pytest.raises(ValueError):
        DecompositionProposal("t", ())


def test_balanced_forms():
    text = "junk (:action a (x)) more (b) (:ACTION c)"
    assert balanced_forms(text) == ["(:action a (x))", "(b)", "(:ACTION c)"]
    assert balanced_forms(text, ":action") == ["(:action a (x))",
                                               "(:ACTION c)"]
    assert balanced_forms("(unclosed") == []


def test_raw_operator_keeps_everything_as_written():
    raw = parse_raw_operator("""Sure!
    (:action Mine-Wood :parameters (?r - tree ?t)
      :precondition (and (tree ?r) (sharp ?t) (not (wet ?t)))
      :effect (and (wood ?o)))""")
    assert raw.name == "mine-wood"
    assert raw.params == (("?r", "tree"), ("?t", "object"))
    assert raw.pre == ((True, "tree", ("?r",)), (True, "sharp", ("?t",)),
                       (False, "wet", ("?t",)))
    assert raw.eff == ((True, "wood", ("?o",)),)
    assert parse_raw_operator("(:action)") is None


def test_correct_syntax_matches_a_canonical_operator(world):
    raw = parse_raw_operator(
        "(:action craft-stick :parameters (?w - item ?o - item)"
        " :precondition (and (inventory ?w) (wood ?w) (hypothetical ?o))"
        " :effect (and (inventory ?o) (stick ?o) (not (inventory ?w))"
        " (not (wood ?w)) (not (hypothetical ?o))))")
    op = correct_syntax(raw, world.vocabulary)
    assert op and op.name == "craft-stick"
    again = correct_syntax(raw_from_operator(op), world.vocabulary)
    assert again == op


def test_rejections_are_falsy(world):
    raw = RawOperatorProposal("x", (("?o", "item"),), (),
                              ((True, "bogus", ("?o",)),))
    result = correct_syntax(raw, world.vocabulary)
    assert isinstance(result, Rejection) and not result
    assert result.reason == "empty-effect"
    assert raw.fingerprint == RawOperatorProposal(
        "x", (("?o", "item"),), (), ((True, "bogus", ("?o",)),)).fingerprint


def test_correct_goal(world):
    vocab = world.vocabulary
    g = correct_goal("(exists (?x - item) (and (inventory ?x) "
                     "(is-wood ?x)))", vocab)
    assert [str(l) for l in g.literals] == ["(inventory ?x)"]
    g = correct_goal("The goal is (exists (?x - item) (and (inventory ?x) "
                     "(wood ?x) (glow ?y)))", vocab)
    assert len(g.literals) == 2
    assert correct_goal("(glow ?x)", vocab) is None
    assert correct_goal("no formula", vocab) is None
    objects = {"tree_0": "tree"}
    g = correct_goal("(and (tree tree_0) (tree tree_9))", vocab, objects)
    assert [str(l) for l in g.literals] == ["(tree tree_0)"]


def test_extract_undefined_names():
    props = [DecompositionProposal("t1", (("mine-wood", ("a", "b", "c")),
                                          ("craft-stick", ("c", "d")))),
             DecompositionProposal("t2", (("mine-wood", ("e", "f", "g")),))]
    usages = extract_undefined_names(props, [])
    assert [k for k, _ in usages] == [("craft-stick", 2), ("mine-wood", 3)]
    assert len(dict(usages)[("mine-wood", 3)]) == 2


def test_replay_backend_serves_distractors_first(tasks):
    bundle = build_bundle(tasks, EnvConfig().recipes)
    be = ReplayBackend(bundle)
    defs = be.definitions("craft-stick", 2, "", 10)
    assert defs[-1] == bundle["definitions"]["craft-stick"][0]
    assert len(defs) == 3
    last = ReplayBackend(bundle, distractors=1, position="last")
    assert last.definitions("craft-stick", 2, "", 10)[0] == defs[-1]
    assert len(last.definitions("craft-stick", 2, "", 10)) == 2
    assert be.decompositions("missing", "", 4) == []
    assert be.describe()["sha256"] == ReplayBackend(bundle).describe()[
        "sha256"]
    with pytest.raises(ValueError, match="format"):
        ReplayBackend({"format": "other/2"})
    with pytest.raises(ValueError, match="position"):
        ReplayBackend(bundle, position="middle")


def test_proposer_respects_sampling_limits(world, tasks):
    bundle = build_bundle(tasks, EnvConfig().recipes)
    cfg = ProposerConfig(n_decomp=1, n_goal=1, n_def=1)
    p = Proposer(ReplayBackend(bundle), cfg)
    t = tasks[0]
    lib = OperatorLibrary(world.vocabulary, ())
    pb = ProposalBundle()
    pb.decompositions[t.id] = p.propose_decompositions(
        t, world.abstract(t.initial_state), lib)
    usages = extract_undefined_names(pb.decompositions[t.id], lib)
    for key, raws in p.propose_operator_definitions(
            usages, world.vocabulary, lib).items():
        pb.definitions[key[0]] = raws
    pb.goals[t.id] = p.propose_goals(t, world.vocabulary)
    assert pb.within(cfg)
    assert pb.decompositions[t.id] and pb.goals[t.id]
    with pytest.raises(ValueError):
        ProposerConfig(n_goal=0)


def test_prompts_render_without_leaking_goals(world, tasks):
    t = tasks[0]
    text = render_unary(world.abstract(t.initial_state))
    assert "free item slots:" in text
    assert "object-at" not in text  # binary facts are left out
    prompt = load_template("goals").safe_substitute(
        predicates="", examples=Exemplar("Craft a stick", (),
                                         "(stick ?x)").as_goal(),
        instruction=t.instruction)
    assert t.instruction in prompt and "$" not in prompt


class FakeResponse(io.BytesIO):
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def fake_opener(answers, seen):
    def opener(req, timeout):
        seen.append(json.loads(req.data.decode()))
        answer = answers.pop(0)
        if isinstance(answer, Exception):
            raise answer
        body = {"choices": [{"message": {"content": answer}}]}
        return FakeResponse(json.dumps(body).encode())
    return opener


def test_remote_backend_parses_chat_answers(monkeypatch):
    monkeypatch.setenv("OPLEARN_API_KEY", "k")
    seen = []
    answers = [urllib.error.URLError("flaky"),
               "(:action a :parameters (?x - item) :effect (wood ?x))",
               "(:action a :parameters (?x - item) :effect (wood ?x))",
               "Goal: (exists (?x - item) (wood ?x))"]
    be = RemoteBackend(RemoteConfig(retries=1, backoff=0, model="m"),
                       opener=fake_opener(answers, seen))
    defs = be.definitions("a", 1, "define a", 2)
    assert len(defs) == 1  # the repeated answer is dropped
    assert "Earlier definitions" in seen[-1]["messages"][1]["content"]
    assert be.goals("t", "goals", 4) == ["(exists (?x - item) (wood ?x))"]
    assert seen[0]["model"] == "m" and be.errors == []
    assert be.describe()["kind"] == "remote"


def test_remote_backend_failures_degrade_to_empty(world, tasks):
    answers = [urllib.error.URLError("down")] * 10
    be = RemoteBackend(RemoteConfig(retries=0, backoff=0),
                       opener=fake_opener(answers, []))
    p = Proposer(be)
    assert p.propose_goals(tasks[0], world.vocabulary) == []
    assert be.errors and be.calls == 1
