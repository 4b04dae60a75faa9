import json

import pytest

from oplearn.craftworld import ConfigError, Craft, CraftingRule, \
    CraftWorld, EnvConfig, MalformedAction, Mine, MiningRule, MoveTo, \
    RawState, RecipeBook, SealedGoal, Task, WorldObject, action_from_list, \
    action_to_list, check_reward, item_id, load_config
from oplearn.pddl import parse_goal
from oplearn.symbolic import Atom


def make_state(inventory=(("i00", "axe"),), agent=(0, 0), next_item=None,
               objects=None):
    objects = objects if objects is not None else (
        WorldObject("tree_0", "tree", 0, 0),
        WorldObject("table_0", "crafting_table", 2, 1))
    return RawState(4, 4, tuple(objects), agent, tuple(inventory),
                    len(inventory) if next_item is None else next_item, 20)


@pytest.fixture
def world():
    return CraftWorld()


def test_mining_allocates_the_next_item_slot(world):
    x = make_state()
    y, ok = world.try_step(x, Mine("i00", "tree_0"))
    assert ok
    assert y.inventory == (("i00", "axe"), ("i01", "wood"))
    assert y.next_item == 2
    assert y.object("tree_0") is None  # trees are used up


def test_renewable_resources_stay(world):
    x = make_state(inventory=(("i00", "shears"),),
                   objects=(WorldObject("sheep_0", "sheep", 0, 0),))
    y = world.step(x, Mine("i00", "sheep_0"))
    assert y.object("sheep_0") is not None
    assert y.item_kind("i01") == "wool"


def test_ineffective_actions_are_noops(world):
    x = make_state(agent=(1, 1))
    # Not standing on the tree.
    assert world.try_step(x, Mine("i00", "tree_0")) == (x, False)
    # Wrong tool.
    y = make_state(inventory=(("i00", "pickaxe"),))
    assert world.try_step(y, Mine("i00", "tree_0")) == (y, False)
    # Unknown recipe.
    assert world.try_step(x, Craft("sword", ("i00",))) == (x, False)


def test_malformed_actions_raise(world):
    x = make_state()
    with pytest.raises(MalformedAction):
        world.step(x, Mine("i07", "tree_0"))
    with pytest.raises(MalformedAction):
        world.step(x, MoveTo(9, 9))
    with pytest.raises(MalformedAction):
        world.step(x, Craft("stick", ("i09",)))
    with pytest.raises(MalformedAction):
        action_from_list(["jump"])


def test_crafting_needs_the_station(world):
    inv = (("i00", "stick"), ("i01", "iron_ingot"))
    away = make_state(inventory=inv, agent=(0, 0))
    assert not world.try_step(away, Craft("sword", ("i00", "i01")))[1]
    at_table = make_state(inventory=inv, agent=(2, 1))
    y, ok = world.try_step(at_table, Craft("sword", ("i01", "i00")))
    assert ok and y.inventory == (("i02", "sword"),)


def test_item_slots_are_bounded(world):
    x = make_state(next_item=20)
    assert world.try_step(x, Mine("i00", "tree_0")) == (x, False)


def test_abstraction(world):
    x = make_state(next_item=1)
    s = world.abstract(x)
    assert Atom("agent-at", ("loc_0_0",)) in s.atoms
    assert Atom("object-at", ("tree_0", "loc_0_0")) in s.atoms
    assert Atom("tree", ("tree_0",)) in s.atoms
    assert Atom("inventory", ("i00",)) in s.atoms
    assert Atom("axe", ("i00",)) in s.atoms
    assert Atom("hypothetical", ("i01",)) in s.atoms
    assert Atom("hypothetical", ("i19",)) in s.atoms
    assert s.objects["tree_0"] == "tree"
    assert s.objects["i05"] == "item"
    assert world.types.is_subtype("tree", "resource")


def test_enumerate_actions_are_all_legal(world):
    x = make_state(inventory=(("i00", "axe"), ("i01", "wood"),
                              ("i02", "wood")))
    acts = world.enumerate_actions(x)
    assert MoveTo(2, 1) in acts and MoveTo(0, 0) not in acts
    assert Mine("i00", "tree_0") in acts
    assert Craft("stick", ("i01",)) in acts
    for u in acts:
        world.try_step(x, u)  # never raises


def test_action_serialisation_round_trips():
    for u in (MoveTo(1, 2), Mine("i00", "tree_0"), Craft("bed", ("i2", "i1"))):
        assert action_from_list(action_to_list(u)) == u
    assert str(Craft("bed", ("i2", "i1"))) == "(craft bed i1 i2)"


def test_raw_state_round_trips():
    x = make_state()
    assert RawState.from_dict(json.loads(x.dumps())) == x


def test_sealed_goal_hides_text_and_round_trips(world):
    goal = parse_goal("(exists (?x - item) (and (inventory ?x) (wood ?x)))")
    sealed = SealedGoal(goal)
    assert "wood" not in repr(sealed) and "wood" not in sealed.seal()
    task = Task("t", "Mine wood", "mining", make_state(), sealed)
    again = Task.from_record(json.loads(json.dumps(task.to_record())))
    assert again == task
    assert not check_reward(task, task.initial_state, world)
    done = world.step(task.initial_state, Mine("i00", "tree_0"))
    assert check_reward(task, done, world)


def test_recipe_book_validation():
    with pytest.raises(ConfigError, match="cyclic"):
        RecipeBook((), (CraftingRule("a", ("b",)), CraftingRule("b", ("a",))))
    with pytest.raises(ConfigError, match="its own input"):
        RecipeBook((MiningRule("tree", "wood", "wood"),), ())
    book = CraftWorld().recipes
    assert RecipeBook.from_dict(book.to_dict()) == book
    assert book.crafting_order().index("iron_ingot") < \
        book.crafting_order().index("sword")


def test_env_config_validation_and_loading(tmp_path):
    with pytest.raises(ConfigError):
        EnvConfig(width=0)
    with pytest.raises(ConfigError, match="unknown config keys"):
        EnvConfig.from_dict({"colour": "red"})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"env": {"width": 6, "height": 6},
                                "learner": {"iterations": 3}}))
    assert load_config(path).width == 6
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(path)


def test_item_ids_are_zero_padded():
    assert item_id(3, 20) == "i03"
    assert item_id(3, 200) == "i003"
