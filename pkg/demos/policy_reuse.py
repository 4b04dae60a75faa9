"""
Reusing low-level trajectories
==============================

A subgoal's trajectory is stored under a lifted key, so the same kind of
subgoal in a different state is solved by replay instead of search.
"""

from oplearn.craftworld import CraftWorld, RawState, WorldObject
from oplearn.policy import PolicyDictionary, Subgoal, lift, solve_subgoal
from oplearn.symbolic import neg, pos

world = CraftWorld()


def make_state(tree_at, agent):
    objects = (WorldObject("tree_0", "tree", *tree_at),
               WorldObject("sheep_0", "sheep", 3, 3))
    return RawState(6, 6, objects, agent, (("i00", "axe"),), 1, 20)


goal = Subgoal((pos("inventory", "i01"), pos("wood", "i01"),
                neg("hypothetical", "i01"), neg("tree", "tree_0")))
key, _ = lift(goal.literals)
print("lifted key:", key)

policy = PolicyDictionary()
for tree_at, agent in [((0, 0), (5, 5)), ((4, 1), (0, 2)),
                       ((2, 5), (1, 1))]:
    x = make_state(tree_at, agent)
    cold = solve_subgoal(world, x, goal, record=False)
    warm = solve_subgoal(world, x, goal, policy=policy)
    policy.merge(warm.experiences)
    print(f"tree at {tree_at}: cold {cold.expanded:3d} nodes, "
          f"warm {warm.expanded:3d} nodes")

print(policy.entries(key)[0])
