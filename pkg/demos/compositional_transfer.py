"""
Zero-shot transfer to long-horizon tasks
========================================

Learn from Mining and Crafting tasks, then solve Compositional tasks with
the merged library and no further learning. The low-level-only baseline
gets the same node budget per task and falls behind on the long ones.
"""

from oplearn.benchmarks import generate_benchmark
from oplearn.bundles import build_bundle
from oplearn.cli import baseline_task
from oplearn.craftworld import CraftWorld, EnvConfig
from oplearn.learner import Learner, LearnerConfig, merge_libraries
from oplearn.proposer import Proposer, ReplayBackend
from oplearn.symbolic import OperatorLibrary

cfg = EnvConfig()
world = CraftWorld(cfg.recipes)
empty = OperatorLibrary(world.vocabulary, ())

libraries = []
for which in ("mining", "crafting"):
    tasks, _ = generate_benchmark(cfg, which, 20)
    backend = ReplayBackend(build_bundle(tasks, cfg.recipes))
    lib, _ = Learner(LearnerConfig(), backend, world).run(tasks, empty)
    libraries.append(lib)
library = merge_libraries(*libraries)
print("learned:", ", ".join(op.name for op in library.operators))

tasks, witnesses = generate_benchmark(cfg, "compositional", 20)
backend = ReplayBackend(build_bundle(tasks, cfg.recipes))
report = Learner(LearnerConfig(), backend, world).transfer_evaluate(
    library, tasks)
print(f"bilevel planning: {len(report.solved)}/{len(tasks)}")

# The baseline searches raw actions straight for the proposed goal.
proposer = Proposer(backend)
solved = 0
for task, wit in zip(tasks, witnesses):
    goals = proposer.propose_goals(
        task, world.vocabulary,
        objects=world.abstract(task.initial_state).objects)
    ok, used = baseline_task(world, task, goals, 1000 * len(wit.high_level))
    solved += ok
    print(f"  {task.instruction:32s} witness {len(wit.low_level):2d} "
          f"steps  baseline {'solved' if ok else 'failed'} ({used} nodes)")
print(f"low-level only: {solved}/{len(tasks)}")
