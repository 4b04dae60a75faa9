"""Procedural Mining / Crafting / Compositional task generation.

Every task comes with a witness: a low-level action sequence, found by
backward chaining through the recipe book, that reaches the hidden goal.
"""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

from oplearn.craftworld import ConfigError, Craft, CraftWorld, EnvConfig, \
    LowLevelAction, Mine, MoveTo, RawState, RecipeBook, SealedGoal, Task, \
    Witness, WorldObject, check_reward, item_id
from oplearn.symbolic import Atom, GoalFormula, Literal

BENCHMARKS = ("mining", "crafting", "compositional")


def goal_for(kinds: Sequence[str]) -> GoalFormula:
    variables = []
    lits = []
    for i, kind in enumerate(kinds):
        v = "?x" if len(kinds) == 1 else f"?x{i}"
        variables.append((v, "item"))
        lits.append(Literal(Atom("inventory", (v,))))
        lits.append(Literal(Atom(kind, (v,))))
    return GoalFormula(tuple(variables), tuple(lits))


def _article(name: str) -> str:
    if name.endswith("s"):
        return ""
    return "an" if name[0] in "aeiou" else "a"


def instruction_for(kinds: Sequence[str], recipes: RecipeBook) -> str:
    mined = {r.output for r in recipes.mining}
    parts = []
    for i, kind in enumerate(kinds):
        name = recipes.name(kind)
        if kind in mined:
            verb, obj = "mine", name
        else:
            verb, obj = "craft", f"{_article(name)} {name}".strip()
        if i == 0:
            parts.append(f"{verb.capitalize()} {obj}")
        elif verb == "craft" and parts and parts[0].startswith("Craft"):
            parts.append(obj)
        else:
            parts.append(f"{verb} {obj}")
    return " and ".join(parts)


class _Chainer:
    """Backward chaining that executes as it goes, recording a witness."""

    def __init__(self, world: CraftWorld, state: RawState):
        self.world = world
        self.recipes = world.recipes
        self.state = state
        self.reserved: Set[str] = set()
        self.actions: List[LowLevelAction] = []
        self.stages: List[Tuple[str, str]] = []
        # Object arguments of each stage: the mined resource and tool, or
        # the ingredients and station, with the new item's slot.
        self.arguments: List[Tuple[str, ...]] = []
        self.used_objects: List[str] = []
        self.used_tools: Set[str] = set()

    def _do(self, u: LowLevelAction) -> None:
        nxt, ok = self.world.try_step(self.state, u)
        if not ok:
            raise ConfigError(f"witness action {u} had no effect")
        if nxt != self.state:
            self.actions.append(u)
        self.state = nxt

    def _goto(self, oid: str) -> None:
        o = self.state.object(oid)
        if (o.x, o.y) != self.state.agent:
            self._do(MoveTo(o.x, o.y))

    def _free_item(self, kind: str) -> Optional[str]:
        for iid, k in self.state.inventory:
            if k == kind and iid not in self.reserved:
                return iid
        return None

    def tool(self, kind: str, depth: int) -> str:
        for iid, k in self.state.inventory:
            if k == kind:
                self.used_tools.add(kind)
                return iid
        iid = self.obtain(kind, depth + 1)
        self.used_tools.add(kind)
        return iid

    def obtain(self, kind: str, depth: int = 0) -> str:
        if depth > 30:
            raise ConfigError(f"cannot produce {kind!r}: recursion too deep")
        have = self._free_item(kind)
        if have is not None:
            self.reserved.add(have)
            return have
        for rule in self.recipes.mining:
            if rule.output != kind:
                continue
            targets = [o for o in self.state.objects
                       if o.kind == rule.resource]
            if not targets:
                continue
            tool = self.tool(rule.tool, depth)
            target = min(targets, key=lambda o: o.id)
            self._goto(target.id)
            slot = self.state.next_item
            self._do(Mine(tool, target.id))
            self.used_objects.append(target.id)
            self.stages.append(("mine", kind))
            args = (target.id, tool)
            break
        else:
            for rule in self.recipes.crafting:
                if rule.output != kind:
                    continue
                ingredients = [self.obtain(k, depth + 1) for k in rule.inputs]
                station = ()
                if rule.station:
                    stations = [o for o in self.state.objects
                                if o.kind == rule.station]
                    if not stations:
                        raise ConfigError(f"no {rule.station} for {kind}")
                    self._goto(stations[0].id)
                    self.used_objects.append(stations[0].id)
                    station = (stations[0].id,)
                slot = self.state.next_item
                self._do(Craft(kind, tuple(ingredients)))
                for i in ingredients:
                    self.reserved.discard(i)
                self.stages.append(("craft", kind))
                args = tuple(ingredients)
                break
            else:
                raise ConfigError(f"nothing in the world produces {kind!r}")
        new = item_id(slot, self.state.max_items)
        self.reserved.add(new)
        if self.stages[-1][0] == "mine":
            self.arguments.append(args + (new,))
        else:
            self.arguments.append(args + (new,) + station)
        return new


def solve_witness(world: CraftWorld, state: RawState,
                  kinds: Sequence[str], task_id: str = "") -> Witness:
    chain = _Chainer(world, state)
    for k in kinds:
        chain.obtain(k)
    return Witness(task_id, tuple(chain.actions), tuple(chain.stages))


def _requirements(world: CraftWorld, inventory: Sequence[str],
                  kinds: Sequence[str], max_items: int
                  ) -> Tuple[Counter, Set[str], List[Tuple[str, str]]]:
    """Dry run against an unlimited world: which world objects and
    tools does producing ``kinds`` from ``inventory`` need?"""
    rec = world.recipes
    objects = []
    for kind in rec.world_kinds:
        for n in range(30):
            objects.append(WorldObject(f"{kind}_{n:02d}", kind, n % 8, n // 8))
    inv = tuple((item_id(i, max_items + 60), k)
                for i, k in enumerate(inventory))
    state = RawState(8, 8, tuple(objects), (7, 7), inv, len(inv),
                     max_items + 60)
    chain = _Chainer(world, state)
    for k in kinds:
        chain.obtain(k)
    need = Counter()
    seen = set()
    for oid in chain.used_objects:
        if oid in seen:
            continue
        seen.add(oid)
        need[oid.rsplit("_", 1)[0]] += 1
    return need, chain.used_tools, chain.stages


def _base_tools(rec: RecipeBook) -> List[str]:
    crafted = {r.output for r in rec.crafting} | {r.output for r in rec.mining}
    return [t for t in rec.tool_kinds if t not in crafted]


def goal_menu(which: str, rec: RecipeBook) -> List[Tuple[str, ...]]:
    if which == "mining":
        return [(r.output,) for r in sorted(rec.mining,
                                            key=lambda r: r.output)]
    if which == "crafting":
        return [(k,) for k in sorted({r.output for r in rec.crafting})]
    if which == "compositional":
        world = CraftWorld(rec)
        base = _base_tools(rec)
        singles = []
        for k in sorted({r.output for r in rec.crafting} |
                        {r.output for r in rec.mining}):
            try:
                _, _, stages = _requirements(world, base, [k], 40)
            except ConfigError:
                continue
            if len(stages) >= 3:
                singles.append((k,))
        # The deepest single artifact paired with the shallowest crafted
        # tool chain yields the long-horizon fixtures.
        depth = {}
        for (k,) in singles:
            depth[k] = len(_requirements(world, base, [k], 40)[2])
        menu = list(singles)
        crafted = [k for (k,) in singles if k in {r.output
                                                 for r in rec.crafting}]
        if len(crafted) >= 2:
            deepest = max(crafted, key=lambda k: (depth[k], k))
            partner = min((k for k in crafted if k != deepest),
                          key=lambda k: (depth[k], k))
            menu.append((deepest, partner))
        return menu
    raise ConfigError(f"unknown benchmark {which!r}")


def _initial_inventory(which: str, world: CraftWorld, kinds: Sequence[str],
                       cfg: EnvConfig) -> List[str]:
    rec = world.recipes
    if which == "mining":
        rule = next(r for r in rec.mining if r.output == kinds[0])
        return [rule.tool]
    base = _base_tools(rec)
    if which == "compositional":
        return list(base)
    # Crafting: pre-stock mined resources until at most two mining steps
    # remain, then keep only the tools actually used.
    inventory = list(base)
    for _ in range(50):
        _, _, stages = _requirements(world, inventory, kinds, cfg.max_items)
        mined = Counter(k for verb, k in stages if verb == "mine")
        if sum(mined.values()) <= 2:
            break
        kind = sorted(mined.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        inventory.append(kind)
    _, tools, _ = _requirements(world, inventory, kinds, cfg.max_items)
    return [k for k in inventory if k not in base or k in tools]


def generate_benchmark(cfg: EnvConfig, which: str, n: int
                       ) -> Tuple[List[Task], List[Witness]]:
    if n < 1:
        raise ConfigError("n must be at least 1")
    if which not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {which!r}")
    world = CraftWorld(cfg.recipes)
    rng = random.Random(f"{cfg.seed}:{which}")
    menu = goal_menu(which, cfg.recipes)
    if not menu:
        raise ConfigError(f"recipe book cannot produce any {which} goal")
    order: List[Tuple[str, ...]] = []
    while len(order) < n:
        block = list(menu)
        rng.shuffle(block)
        order.extend(block)
    tasks, witnesses = [], []
    for idx, kinds in enumerate(order[:n]):
        task_id = f"{which}-{idx:03d}"
        inv_kinds = _initial_inventory(which, world, kinds, cfg)
        need, _, _ = _requirements(world, inv_kinds, kinds, cfg.max_items)
        counts = Counter(need)
        if sum(counts.values()) > cfg.max_world_objects:
            raise ConfigError(f"{task_id}: goal {kinds} needs "
                              f"{sum(counts.values())} world objects")
        resources = list(cfg.recipes.resource_kinds)
        target = min(cfg.max_world_objects, sum(counts.values()) + 2)
        while sum(counts.values()) < target:
            counts[rng.choice(resources)] += 1
        cells = [(x, y) for x in range(cfg.width) for y in range(cfg.height)]
        rng.shuffle(cells)
        agent = cells.pop()
        objects = []
        for kind in sorted(counts):
            for k in range(counts[kind]):
                x, y = cells.pop()
                objects.append(WorldObject(f"{kind}_{k}", kind, x, y))
        if len(inv_kinds) > cfg.max_items:
            raise ConfigError("inventory exceeds max_items")
        inventory = tuple((item_id(i, cfg.max_items), k)
                          for i, k in enumerate(inv_kinds))
        state = RawState(cfg.width, cfg.height, tuple(objects), agent,
                         inventory, len(inventory), cfg.max_items)
        state.validate()
        try:
            witness = solve_witness(world, state, kinds, task_id)
        except ConfigError as e:
            raise ConfigError(f"{task_id}: unsatisfiable: {e}") from None
        goal = goal_for(kinds)
        task = Task(task_id, instruction_for(kinds, cfg.recipes), which,
                    state, SealedGoal(goal))
        if check_reward(task, state, world):
            raise ConfigError(f"{task_id}: goal already holds initially")
        if not check_reward(task, world.run(state, witness.low_level), world):
            raise ConfigError(f"{task_id}: witness does not reach the goal")
        tasks.append(task)
        witnesses.append(witness)
    return tasks, witnesses
