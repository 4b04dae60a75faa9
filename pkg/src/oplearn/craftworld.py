"""Deterministic Mini-Minecraft style crafting world.

The agent teleports between cells, mines resources with tools and crafts
items from inventory ingredients. Created items take the next free id from
a fixed pool; free pool ids show up in the abstract state as
``(hypothetical ?i)`` so symbolic operators can name the item they create.
"""
from __future__ import annotations

import base64
import itertools
import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, \
    Tuple, Union

from oplearn.pddl import format_goal, parse_goal
from oplearn.symbolic import ROOT_TYPE, AbstractState, Atom, GoalFormula, \
    Predicate, TypeHierarchy, Vocabulary, eval_goal, pos


class ConfigError(ValueError):
    pass


class MalformedAction(ValueError):
    """A low-level action referring to something that does not exist."""


# ---------------------------------------------------------------------------
# Recipes


@dataclass(frozen=True)
class MiningRule:
    resource: str
    tool: str
    output: str
    renewable: bool = False


@dataclass(frozen=True)
class CraftingRule:
    output: str
    inputs: Tuple[str, ...]
    station: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(sorted(self.inputs)))


@dataclass(frozen=True)
class RecipeBook:
    mining: Tuple[MiningRule, ...]
    crafting: Tuple[CraftingRule, ...]
    display: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "display",
                           tuple(sorted(tuple(p) for p in self.display)))
        for r in self.mining:
            if r.output in (r.resource, r.tool):
                raise ConfigError(f"mining rule for {r.output!r} yields "
                                  "its own input")
        for r in self.crafting:
            if r.output in r.inputs:
                raise ConfigError(f"crafting rule for {r.output!r} yields "
                                  "its own input")
        self.crafting_order()
        if set(self.resource_kinds) & set(self.item_kinds) or \
                set(self.station_kinds) & set(self.item_kinds):
            raise ConfigError("world kinds and item kinds must be disjoint")

    @property
    def resource_kinds(self) -> Tuple[str, ...]:
        return tuple(sorted({r.resource for r in self.mining}))

    @property
    def station_kinds(self) -> Tuple[str, ...]:
        return tuple(sorted({r.station for r in self.crafting if r.station}))

    @property
    def world_kinds(self) -> Tuple[str, ...]:
        return tuple(sorted(self.resource_kinds + self.station_kinds))

    @property
    def tool_kinds(self) -> Tuple[str, ...]:
        return tuple(sorted({r.tool for r in self.mining}))

    @property
    def item_kinds(self) -> Tuple[str, ...]:
        kinds = {r.tool for r in self.mining} | {r.output for r in self.mining}
        for r in self.crafting:
            kinds.add(r.output)
            kinds.update(r.inputs)
        return tuple(sorted(kinds))

    def crafting_order(self) -> List[str]:
        """Topological order of crafted outputs; raises on a cycle."""
        deps: Dict[str, set] = {}
        for r in self.crafting:
            deps.setdefault(r.output, set()).update(r.inputs)
        for r in self.mining:
            deps.setdefault(r.output, set()).add(r.tool)
        order: List[str] = []
        state: Dict[str, int] = {}

        def visit(k: str, path: Tuple[str, ...]):
            if state.get(k) == 2:
                return
            if state.get(k) == 1:
                raise ConfigError("cyclic recipes: " + " -> ".join(path + (k,)))
            state[k] = 1
            for d in sorted(deps.get(k, ())):
                visit(d, path + (k,))
            state[k] = 2
            order.append(k)

        for k in sorted(deps):
            visit(k, ())
        return order

    def mining_rule(self, resource: str, tool: str) -> Optional[MiningRule]:
        for r in self.mining:
            if r.resource == resource and r.tool == tool:
                return r
        return None

    def name(self, kind: str) -> str:
        return dict(self.display).get(kind, kind.replace("_", " "))

    def to_dict(self) -> dict:
        return {
            "mining": [{"resource": r.resource, "tool": r.tool,
                        "output": r.output, "renewable": r.renewable}
                       for r in self.mining],
            "crafting": [{"output": r.output, "inputs": list(r.inputs),
                          "station": r.station} for r in self.crafting],
            "display": dict(self.display),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RecipeBook":
        try:
            mining = tuple(MiningRule(m["resource"], m["tool"], m["output"],
                                      bool(m.get("renewable", False)))
                           for m in d["mining"])
            crafting = tuple(CraftingRule(c["output"], tuple(c["inputs"]),
                                          c.get("station"))
                             for c in d["crafting"])
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed recipe book: {e}") from None
        return cls(mining, crafting,
                   tuple(sorted(d.get("display", {}).items())))


DEFAULT_RECIPES = RecipeBook(
    mining=(
        MiningRule("tree", "axe", "wood"),
        MiningRule("iron_ore", "pickaxe", "iron_ore_item"),
        MiningRule("chicken", "sword", "feather", renewable=True),
        MiningRule("sheep", "shears", "wool", renewable=True),
    ),
    crafting=(
        CraftingRule("iron_ingot", ("iron_ore_item",), "furnace"),
        CraftingRule("stick", ("wood",)),
        CraftingRule("sword", ("stick", "iron_ingot"), "crafting_table"),
        CraftingRule("shears", ("stick", "iron_ingot"), "crafting_table"),
        CraftingRule("bed", ("wood", "wood", "wool"), "crafting_table"),
    ),
    display=(("iron_ingot", "iron ingot"), ("iron_ore_item", "iron ore"),
             ("crafting_table", "crafting table")),
)


@dataclass(frozen=True)
class EnvConfig:
    width: int = 8
    height: int = 8
    max_world_objects: int = 10
    max_items: int = 20
    recipes: RecipeBook = DEFAULT_RECIPES
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("grid must be at least 1x1")
        if self.max_world_objects > self.width * self.height:
            raise ConfigError("more world objects than grid cells")
        if self.max_items < 1:
            raise ConfigError("max_items must be positive")

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "max_world_objects": self.max_world_objects,
                "max_items": self.max_items, "seed": self.seed,
                "recipes": self.recipes.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnvConfig":
        known = {"width", "height", "max_world_objects", "max_items", "seed",
                 "recipes"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kwargs = {k: d[k] for k in known - {"recipes"} if k in d}
        if "recipes" in d:
            kwargs["recipes"] = RecipeBook.from_dict(d["recipes"])
        return cls(**kwargs)


def load_config(path) -> EnvConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    sections = {"env", "learner", "remote"}
    if sections & set(data):
        return EnvConfig.from_dict(data.get("env", {}))
    return EnvConfig.from_dict(data)


# ---------------------------------------------------------------------------
# States and actions


@dataclass(frozen=True, order=True)
class WorldObject:
    id: str
    kind: str
    x: int
    y: int


@dataclass(frozen=True)
class RawState:
    width: int
    height: int
    objects: Tuple[WorldObject, ...]
    agent: Tuple[int, int]
    inventory: Tuple[Tuple[str, str], ...]
    next_item: int
    max_items: int

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(sorted(self.objects)))
        object.__setattr__(self, "inventory", tuple(sorted(self.inventory)))

    def validate(self) -> None:
        if not self._on_grid(*self.agent):
            raise ConfigError("agent off grid")
        ids = [o.id for o in self.objects] + [i for i, _ in self.inventory]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate entity ids")
        for o in self.objects:
            if not self._on_grid(o.x, o.y):
                raise ConfigError(f"{o.id} off grid")

    def _on_grid(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def object(self, oid: str) -> Optional[WorldObject]:
        for o in self.objects:
            if o.id == oid:
                return o
        return None

    def item_kind(self, iid: str) -> Optional[str]:
        for i, k in self.inventory:
            if i == iid:
                return k
        return None

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "objects": [[o.id, o.kind, o.x, o.y] for o in self.objects],
                "agent": list(self.agent),
                "inventory": [list(p) for p in self.inventory],
                "next_item": self.next_item, "max_items": self.max_items}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RawState":
        return cls(d["width"], d["height"],
                   tuple(WorldObject(*o) for o in d["objects"]),
                   tuple(d["agent"]),
                   tuple(tuple(p) for p in d["inventory"]),
                   d["next_item"], d["max_items"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))


@dataclass(frozen=True, order=True)
class MoveTo:
    x: int
    y: int

    def __str__(self):
        return f"(move-to {location_name(self.x, self.y)})"


@dataclass(frozen=True, order=True)
class Mine:
    tool: str
    target: str

    def __str__(self):
        return f"(mine {self.tool} {self.target})"


@dataclass(frozen=True, order=True)
class Craft:
    output: str
    ingredients: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "ingredients", tuple(sorted(self.ingredients)))

    def __str__(self):
        return f"(craft {self.output} {' '.join(self.ingredients)})"


LowLevelAction = Union[MoveTo, Mine, Craft]


def action_to_list(u: LowLevelAction) -> list:
    if isinstance(u, MoveTo):
        return ["move-to", u.x, u.y]
    if isinstance(u, Mine):
        return ["mine", u.tool, u.target]
    return ["craft", u.output] + list(u.ingredients)


def action_from_list(data: Sequence) -> LowLevelAction:
    head = data[0]
    if head == "move-to":
        return MoveTo(int(data[1]), int(data[2]))
    if head == "mine":
        return Mine(data[1], data[2])
    if head == "craft":
        return Craft(data[1], tuple(data[2:]))
    raise MalformedAction(f"unknown action {head!r}")


def location_name(x: int, y: int) -> str:
    return f"loc_{x}_{y}"


def item_id(n: int, max_items: int) -> str:
    return f"i{n:0{len(str(max_items - 1))}d}"


# ---------------------------------------------------------------------------
# Environment


class CraftWorld:
    """Transition function, abstraction and action enumeration."""

    def __init__(self, recipes: RecipeBook = DEFAULT_RECIPES):
        self.recipes = recipes
        parents = {"location": ROOT_TYPE, "thing": ROOT_TYPE,
                   "resource": "thing", "station": "thing", "item": "thing"}
        for k in recipes.resource_kinds:
            parents[k] = "resource"
        for k in recipes.station_kinds:
            parents[k] = "station"
        self.types = TypeHierarchy(parents)
        preds = [Predicate("agent-at", ("location",)),
                 Predicate("object-at", ("thing", "location")),
                 Predicate("inventory", ("item",)),
                 Predicate("hypothetical", ("item",))]
        preds += [Predicate(k, ("resource",)) for k in recipes.resource_kinds]
        preds += [Predicate(k, ("station",)) for k in recipes.station_kinds]
        preds += [Predicate(k, ("item",)) for k in recipes.item_kinds]
        self.vocabulary = Vocabulary(self.types, tuple(preds))
        self._rules = {(r.resource, r.tool): r for r in recipes.mining}
        self._abstract_cache: Dict[RawState, AbstractState] = {}

    # -- dynamics -----------------------------------------------------------

    def step(self, x: RawState, u: LowLevelAction) -> RawState:
        return self.try_step(x, u)[0]

    def try_step(self, x: RawState, u: LowLevelAction
                 ) -> Tuple[RawState, bool]:
        """Return the successor and whether the action had an effect.

        Legal-but-ineffective actions are no-ops; references to entities
        that do not exist raise ``MalformedAction``.
        """
        if isinstance(u, MoveTo):
            if not x._on_grid(u.x, u.y):
                raise MalformedAction(f"{u} is off the grid")
            if (u.x, u.y) == x.agent:
                return x, True
            return replace(x, agent=(u.x, u.y)), True
        if isinstance(u, Mine):
            tool_kind = x.item_kind(u.tool)
            target = x.object(u.target)
            if tool_kind is None or target is None:
                raise MalformedAction(f"{u} refers to a missing entity")
            rule = self._rules.get((target.kind, tool_kind))
            if rule is None or (target.x, target.y) != x.agent or \
                    x.next_item >= x.max_items:
                return x, False
            objects = x.objects if rule.renewable else tuple(
                o for o in x.objects if o.id != target.id)
            new_id = item_id(x.next_item, x.max_items)
            return replace(x, objects=objects,
                           inventory=x.inventory + ((new_id, rule.output),),
                           next_item=x.next_item + 1), True
        if isinstance(u, Craft):
            kinds = []
            for iid in u.ingredients:
                k = x.item_kind(iid)
                if k is None:
                    raise MalformedAction(f"{u} uses missing item {iid!r}")
                kinds.append(k)
            if len(set(u.ingredients)) != len(u.ingredients):
                return x, False
            rule = self._craft_rule(u.output, tuple(sorted(kinds)))
            if rule is None or x.next_item >= x.max_items:
                return x, False
            if rule.station and not any(
                    o.kind == rule.station and (o.x, o.y) == x.agent
                    for o in x.objects):
                return x, False
            used = set(u.ingredients)
            new_id = item_id(x.next_item, x.max_items)
            inv = tuple(p for p in x.inventory if p[0] not in used)
            return replace(x, inventory=inv + ((new_id, u.output),),
                           next_item=x.next_item + 1), True
        raise MalformedAction(f"unknown action {u!r}")

    def _craft_rule(self, output: str, kinds: Tuple[str, ...]
                    ) -> Optional[CraftingRule]:
        for r in self.recipes.crafting:
            if r.output == output and r.inputs == kinds:
                return r
        return None

    def run(self, x: RawState, actions: Iterable[LowLevelAction]) -> RawState:
        for u in actions:
            x = self.step(x, u)
        return x

    # -- abstraction --------------------------------------------------------

    def abstract(self, x: RawState) -> AbstractState:
        cached = self._abstract_cache.get(x)
        if cached is not None:
            return cached
        objects: Dict[str, str] = {}
        atoms: List[Atom] = []
        agent_loc = location_name(*x.agent)
        objects[agent_loc] = "location"
        atoms.append(Atom("agent-at", (agent_loc,)))
        for o in x.objects:
            loc = location_name(o.x, o.y)
            objects[loc] = "location"
            objects[o.id] = o.kind
            atoms.append(Atom("object-at", (o.id, loc)))
            atoms.append(Atom(o.kind, (o.id,)))
        for iid, kind in x.inventory:
            objects[iid] = "item"
            atoms.append(Atom("inventory", (iid,)))
            atoms.append(Atom(kind, (iid,)))
        for n in range(x.next_item, x.max_items):
            iid = item_id(n, x.max_items)
            objects[iid] = "item"
            atoms.append(Atom("hypothetical", (iid,)))
        s = AbstractState(objects, atoms, self.types)
        if len(self._abstract_cache) > 200_000:
            self._abstract_cache.clear()
        self._abstract_cache[x] = s
        return s

    # -- action enumeration -------------------------------------------------

    def enumerate_actions(self, x: RawState) -> List[LowLevelAction]:
        out: List[LowLevelAction] = []
        cells = sorted({(o.x, o.y) for o in x.objects} - {x.agent})
        out.extend(MoveTo(cx, cy) for cx, cy in cells)
        tools = [i for i, k in x.inventory if k in self.recipes.tool_kinds]
        targets = [o.id for o in x.objects
                   if o.kind in self.recipes.resource_kinds]
        out.extend(Mine(t, r) for t in tools for r in targets)
        by_kind: Dict[str, List[str]] = {}
        for iid, k in x.inventory:
            by_kind.setdefault(k, []).append(iid)
        for rule in sorted(self.recipes.crafting,
                           key=lambda r: (r.output, r.inputs)):
            need = Counter(rule.inputs)
            choices = []
            for kind in sorted(need):
                have = by_kind.get(kind, [])
                choices.append(list(itertools.combinations(have, need[kind])))
            for combo in itertools.product(*choices):
                ingredients = tuple(i for group in combo for i in group)
                out.append(Craft(rule.output, ingredients))
        return out


def check_reward(task: "Task", x: RawState,
                 world: Optional[CraftWorld] = None) -> bool:
    """The only place a task's hidden goal is evaluated."""
    world = world or CraftWorld()
    return eval_goal(world.abstract(x), task.goal._reveal())


# ---------------------------------------------------------------------------
# Tasks


class SealedGoal:
    """Wrapper that keeps a goal formula away from learner code."""

    __slots__ = ("_text",)

    def __init__(self, goal: Union[GoalFormula, str]):
        self._text = goal if isinstance(goal, str) else format_goal(goal)

    def _reveal(self) -> GoalFormula:
        return parse_goal(self._text)

    def seal(self) -> str:
        return base64.b64encode(self._text.encode()).decode()

    @classmethod
    def unseal(cls, token: str) -> "SealedGoal":
        return cls(base64.b64decode(token.encode()).decode())

    def __eq__(self, other):
        return isinstance(other, SealedGoal) and self._text == other._text

    def __hash__(self):
        return hash(self._text)

    def __repr__(self):
        return "SealedGoal(<hidden>)"


@dataclass(frozen=True)
class Task:
    id: str
    instruction: str
    benchmark: str
    initial_state: RawState
    goal: SealedGoal = field(repr=False)

    def to_record(self) -> dict:
        return {"id": self.id, "instruction": self.instruction,
                "benchmark": self.benchmark,
                "initial_state": self.initial_state.to_dict(),
                "goal": {"hidden": True, "sealed": self.goal.seal()}}

    @classmethod
    def from_record(cls, rec: Mapping) -> "Task":
        return cls(rec["id"], rec["instruction"], rec["benchmark"],
                   RawState.from_dict(rec["initial_state"]),
                   SealedGoal.unseal(rec["goal"]["sealed"]))


@dataclass(frozen=True)
class Witness:
    task_id: str
    low_level: Tuple[LowLevelAction, ...]
    high_level: Tuple[Tuple[str, str], ...]  # (mine|craft, output kind)

    def to_record(self) -> dict:
        return {"id": self.task_id,
                "low_level": [action_to_list(u) for u in self.low_level],
                "high_level": [list(s) for s in self.high_level]}

    @classmethod
    def from_record(cls, rec: Mapping) -> "Witness":
        return cls(rec["id"],
                   tuple(action_from_list(u) for u in rec["low_level"]),
                   tuple(tuple(s) for s in rec["high_level"]))


def save_dataset(tasks: Sequence[Task], path) -> None:
    with open(path, "w") as f:
        for t in tasks:
            f.write(json.dumps(t.to_record(), sort_keys=True) + "\n")


def load_dataset(path) -> List[Task]:
    with open(path) as f:
        return [Task.from_record(json.loads(line)) for line in f
                if line.strip()]


def save_witnesses(witnesses: Sequence[Witness], path) -> None:
    with open(path, "w") as f:
        for w in witnesses:
            f.write(json.dumps(w.to_record(), sort_keys=True) + "\n")


def load_witnesses(path) -> Dict[str, Witness]:
    with open(path) as f:
        ws = [Witness.from_record(json.loads(line)) for line in f
              if line.strip()]
    return {w.task_id: w for w in ws}
