"""
Learning mining operators from proposals
========================================

Generate a few Mining tasks, serve operator definitions from a replay
bundle that mixes correct and wrong definitions, and watch the learner
keep only the ones that work.
"""

from oplearn.benchmarks import generate_benchmark
from oplearn.bundles import build_bundle
from oplearn.craftworld import CraftWorld, EnvConfig
from oplearn.learner import Learner, LearnerConfig
from oplearn.pddl import print_domain
from oplearn.proposer import ReplayBackend
from oplearn.symbolic import OperatorLibrary

cfg = EnvConfig()
world = CraftWorld(cfg.recipes)
tasks, witnesses = generate_benchmark(cfg, "mining", 8)
print(tasks[0].instruction, "->", [str(u) for u in witnesses[0].low_level])

# Two wrong definitions are recorded for every operator name and they are
# served before the right one.
bundle = build_bundle(tasks, cfg.recipes, distractors=2)
learner = Learner(LearnerConfig(iterations=2), ReplayBackend(bundle), world)
library, reports = learner.run(tasks,
                               OperatorLibrary(world.vocabulary, ()))

for r in reports:
    print(f"iteration {r.iteration}: solved {len(r.solved)}/"
          f"{len(r.attempted)}, {len(r.proposed)} proposed")
for oid, (b, s) in sorted(reports[-1].stats.items()):
    print(f"  {oid:32s} used {b:2d}  worked {s:2d}")

# Only the verified operators end up in the library.
print(print_domain(library).split("(:action", 1)[1][:400])
