"""Command line: ``oplearn generate | bundle | learn | baseline | eval | inspect``.

Exit codes: 0 the command completed (whether or not every task was
solved), 2 usage error, 3 bad input file, 4 the proposal backend could
not be reached. Command-line flags override values from ``--config``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from oplearn import __version__
from oplearn.benchmarks import BENCHMARKS, generate_benchmark
from oplearn.bundles import build_bundle
from oplearn.craftworld import ConfigError, CraftWorld, EnvConfig, \
    check_reward, load_dataset, load_witnesses, save_dataset, \
    save_witnesses
from oplearn.learner import Learner, LearnerConfig
from oplearn.pddl import PDDLSyntaxError, parse_domain, print_domain
from oplearn.policy import PolicyDictionary, search_lowlevel
from oplearn.proposer import Proposer, RemoteBackend, RemoteConfig, \
    ReplayBackend
from oplearn.symbolic import OperatorLibrary, SymbolicError

log = logging.getLogger("oplearn")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_BACKEND = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json(path) -> dict:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise CLIError(f"cannot read {path}: {e.strerror}")
    except json.JSONDecodeError as e:
        raise CLIError(f"{path}: invalid JSON: {e}")
    if not isinstance(data, dict):
        raise CLIError(f"{path}: expected a JSON object")
    return data


def _configs(args) -> tuple:
    """Environment, learner and remote settings: file first, then flags."""
    data = _read_json(args.config) if getattr(args, "config", None) else {}
    try:
        env = EnvConfig.from_dict(data.get("env", {}))
        learner = LearnerConfig.from_dict(data.get("learner", {}))
        remote = RemoteConfig(**data.get("remote", {}))
    except (ConfigError, ValueError, TypeError) as e:
        raise CLIError(f"bad config: {e}")
    overrides = {}
    for flag, key in (("iterations", "iterations"), ("tau_b", "tau_b"),
                      ("tau_r", "tau_r"), ("jobs", "jobs"),
                      ("seed", "seed"), ("budget", "subgoal_budget")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    try:
        learner = replace(learner, **overrides)
    except ValueError as e:
        raise CLIError(str(e), EXIT_USAGE)
    return env, learner, remote


def _backend(args, remote: RemoteConfig):
    if args.backend == "remote":
        return RemoteBackend(remote)
    if not args.bundle:
        raise CLIError("--bundle is required with the replay backend",
                       EXIT_USAGE)
    try:
        return ReplayBackend(_read_json(args.bundle),
                             distractors=args.distractors,
                             position=args.distractor_position,
                             source=str(args.bundle))
    except ValueError as e:
        raise CLIError(f"{args.bundle}: {e}")


def _check_backend(backend) -> None:
    if backend.kind == "remote" and backend.errors and \
            len(backend.errors) >= backend.calls:
        raise CLIError(f"backend unreachable: {backend.errors[-1]}",
                       EXIT_BACKEND)


def _dataset(path):
    try:
        return load_dataset(path)
    except OSError as e:
        raise CLIError(f"cannot read {path}: {e.strerror}")
    except (ValueError, KeyError, TypeError) as e:
        raise CLIError(f"{path}: malformed dataset record: {e}")


def _library(path, world: CraftWorld) -> OperatorLibrary:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CLIError(f"cannot read {path}: {e.strerror}")
    try:
        lib = parse_domain(text)
    except PDDLSyntaxError as e:
        raise CLIError(f"{path}: {e}")
    except SymbolicError as e:
        raise CLIError(f"{path}: {e}")
    if lib.vocabulary.predicates != world.vocabulary.predicates:
        # Operators must speak the environment's vocabulary.
        lib = OperatorLibrary(world.vocabulary, lib.operators, lib.name)
        for op in lib.operators:
            try:
                op.check(world.vocabulary)
            except SymbolicError as e:
                raise CLIError(f"{path}: {e}")
    return lib


# ---------------------------------------------------------------------------
# Commands


def cmd_generate(args) -> int:
    env, _, _ = _configs(args)
    if args.seed is not None:
        env = replace(env, seed=args.seed)
    try:
        tasks, witnesses = generate_benchmark(env, args.benchmark, args.n)
    except ConfigError as e:
        raise CLIError(str(e))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(tasks, out)
    side = witness_path(out)
    save_witnesses(witnesses, side)
    lengths = [len(w.low_level) for w in witnesses]
    print(f"{len(tasks)} {args.benchmark} tasks -> {out} "
          f"(witnesses {side}); witness length {min(lengths)}-"
          f"{max(lengths)}")
    return EXIT_OK


def witness_path(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".witnesses.jsonl")


def cmd_bundle(args) -> int:
    env, _, _ = _configs(args)
    tasks = _dataset(args.dataset)
    bundle = build_bundle(tasks, env.recipes, args.distractors_recorded,
                          noisy_goals=not args.clean_goals)
    Path(args.out).write_text(json.dumps(bundle, indent=1, sort_keys=True)
                              + "\n")
    print(f"replay bundle for {len(tasks)} tasks -> {args.out}")
    return EXIT_OK


def _manifest_args(args) -> None:
    """Fill unset learn arguments from a stored manifest."""
    m = _read_json(args.manifest)
    for key in ("dataset", "bundle", "config", "init_lib"):
        if getattr(args, key, None) is None and m["inputs"].get(key):
            setattr(args, key, m["inputs"][key]["path"])
    args.backend = m["backend"]["kind"]
    if m["backend"]["kind"] == "replay":
        args.distractors = m["backend"].get("distractors")
        args.distractor_position = m["backend"].get("position", "first")
    args._learner = m["learner"]
    args._env = m["env"]


def cmd_learn(args) -> int:
    if args.manifest:
        _manifest_args(args)
    if not args.dataset:
        raise CLIError("--dataset is required", EXIT_USAGE)
    env, learner, remote = _configs(args)
    if getattr(args, "_learner", None):
        learner = LearnerConfig.from_dict(args._learner)
        env = EnvConfig.from_dict(args._env)
    backend = _backend(args, remote)
    tasks = _dataset(args.dataset)
    world = CraftWorld(env.recipes)
    init = _library(args.init_lib, world) if args.init_lib else \
        OperatorLibrary(world.vocabulary, (), "craftworld")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {"dataset": {"path": str(args.dataset),
                          "sha256": _sha256(args.dataset)}}
    for key in ("bundle", "config", "init_lib"):
        path = getattr(args, key, None)
        if path:
            inputs[key] = {"path": str(path), "sha256": _sha256(path)}
    manifest = {
        "command": "learn", "version": __version__,
        "seed": learner.seed, "learner": learner.to_dict(),
        "env": env.to_dict(), "backend": backend.describe(),
        "inputs": inputs,
        "outputs": {"library": "library.pddl", "reports": "reports.jsonl",
                    "policy": "policy.json", "timing": "timing.jsonl"},
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    reports = open(out / "reports.jsonl", "w")
    timing = open(out / "timing.jsonl", "w")

    def emit(report):
        reports.write(json.dumps(report.to_record(), sort_keys=True) + "\n")
        reports.flush()
        timing.write(json.dumps({"iteration": report.iteration,
                                 "wall_time": round(report.wall_time, 4)})
                     + "\n")
        timing.flush()
        print(f"iteration {report.iteration}: solved "
              f"{len(report.solved)}/{len(report.attempted)}, verified "
              f"{len(report.retained)} operators")

    lrn = Learner(learner, backend, world)
    try:
        lib, _ = lrn.run(tasks, init, on_report=emit)
    finally:
        reports.close()
        timing.close()
    _check_backend(backend)
    (out / "library.pddl").write_text(print_domain(
        OperatorLibrary(lib.vocabulary, lib.operators, "learned")))
    lrn.policy.save(out / "policy.json")
    solved = sum(s.solved for s in lrn.status.values())
    print(f"solved {solved}/{len(tasks)} tasks; library -> "
          f"{out / 'library.pddl'}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    env, learner, remote = _configs(args)
    backend = _backend(args, remote)
    tasks = _dataset(args.dataset)
    world = CraftWorld(env.recipes)
    witnesses = load_witnesses(args.witnesses) if args.witnesses else {}
    proposer = Proposer(backend, learner.proposer)
    rows = []
    for t in tasks:
        t0 = time.perf_counter()
        budget = args.total_budget
        if t.id in witnesses:
            budget = learner.subgoal_budget * len(witnesses[t.id].high_level)
        goals = proposer.propose_goals(
            t, world.vocabulary, objects=world.abstract(t.initial_state)
            .objects)
        solved, expanded = baseline_task(world, t, goals, budget)
        rows.append({"id": t.id, "solved": solved, "expanded": expanded,
                     "budget": budget,
                     "wall_time": round(time.perf_counter() - t0, 4)})
    _check_backend(backend)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as f:
            for r in rows:
                f.write(json.dumps(r, sort_keys=True) + "\n")
    n = sum(r["solved"] for r in rows)
    print(f"low-level baseline solved {n}/{len(rows)} tasks")
    return EXIT_OK


def baseline_task(world: CraftWorld, task, goals, budget: int):
    """Search directly for each goal candidate, sharing one node budget."""
    used = 0
    for goal in goals:
        if used >= budget:
            break
        path, n = search_lowlevel(world, task.initial_state, goal,
                                  budget - used)
        used += n
        if path is not None and check_reward(
                task, world.run(task.initial_state, path), world):
            return True, used
    return False, used


def cmd_eval(args) -> int:
    env, learner, remote = _configs(args)
    world = CraftWorld(env.recipes)
    lib = _library(args.library, world)
    backend = _backend(args, remote)
    tasks = _dataset(args.dataset)
    policy = PolicyDictionary.load(args.policy) if args.policy else None
    lrn = Learner(learner, backend, world, policy)
    report = lrn.transfer_evaluate(lib, tasks)
    _check_backend(backend)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(
            json.dumps(report.to_record(), sort_keys=True) + "\n")
    print(f"solved {len(report.solved)}/{len(report.attempted)} tasks "
          f"({100 * report.solve_rate:.0f}%)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise CLIError(f"no such file: {path}")
    if path.suffix == ".pddl":
        lib = _library(path, CraftWorld(EnvConfig().recipes)) \
            if not args.raw else parse_domain(path.read_text())
        for op in lib.operators:
            pre = ", ".join(str(l) for l in op.pre)
            eff = ", ".join(str(l) for l in op.eff)
            print(f"{op.name}({', '.join(f'{v}:{t}' for v, t in op.params)})")
            print(f"    pre: {pre}")
            print(f"    eff: {eff}")
    elif path.name.endswith(".jsonl"):
        for line in path.read_text().splitlines():
            rec = json.loads(line)
            if "iteration" in rec and "attempted" in rec:
                print(f"iteration {rec['iteration']}: solved "
                      f"{len(rec['solved'])}/{len(rec['attempted'])}, "
                      f"retained {len(rec['retained'])}, rejected "
                      f"{len(rec['rejected'])}")
            else:
                print(json.dumps(rec, sort_keys=True))
    else:
        d = PolicyDictionary.load(path)
        for key, entries in sorted(d.table.items()):
            best = entries[0]
            print(f"{' & '.join(key)}: {len(entries)} trajectories, best "
                  f"{best.success}/{best.attempts} "
                  f"{' '.join('(' + ' '.join(s) + ')' for s in best.trajectory)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oplearn", description=__doc__.split(
        "\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def backend_flags(sp):
        sp.add_argument("--backend", choices=("replay", "remote"),
                        default="replay")
        sp.add_argument("--bundle", help="replay bundle (JSON)")
        sp.add_argument("--distractors", type=int, default=None,
                        help="wrong definitions served per name")
        sp.add_argument("--distractor-position", choices=("first", "last"),
                        default="first")

    g = sub.add_parser("generate", help="generate a benchmark dataset")
    g.add_argument("--config")
    g.add_argument("--benchmark", choices=BENCHMARKS, required=True)
    g.add_argument("-n", type=_positive, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("bundle", help="write the curated replay bundle")
    b.add_argument("--config")
    b.add_argument("--dataset", required=True)
    b.add_argument("--distractors-recorded", type=int, default=2)
    b.add_argument("--clean-goals", action="store_true")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bundle)

    lr = sub.add_parser("learn", help="learn an operator library")
    lr.add_argument("--dataset")
    lr.add_argument("--config")
    lr.add_argument("--init-lib")
    lr.add_argument("--manifest", help="rerun from a stored manifest")
    lr.add_argument("--out", required=True)
    lr.add_argument("--iterations", type=_positive)
    lr.add_argument("--tau-b", type=_positive)
    lr.add_argument("--tau-r", type=float)
    lr.add_argument("--budget", type=_positive, help="nodes per subgoal")
    lr.add_argument("--seed", type=int)
    lr.add_argument("--jobs", type=_positive)
    backend_flags(lr)
    lr.set_defaults(func=cmd_learn)

    bl = sub.add_parser("baseline", help="low-level search only")
    bl.add_argument("--dataset", required=True)
    bl.add_argument("--config")
    bl.add_argument("--witnesses", help="size each task's budget as "
                    "subgoal budget x witness plan steps")
    bl.add_argument("--total-budget", type=_positive, default=10_000)
    bl.add_argument("--budget", type=_positive, help="nodes per subgoal")
    bl.add_argument("--out")
    backend_flags(bl)
    bl.set_defaults(func=cmd_baseline)

    e = sub.add_parser("eval", help="solve tasks with a fixed library")
    e.add_argument("--library", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--config")
    e.add_argument("--policy")
    e.add_argument("--budget", type=_positive, help="nodes per subgoal")
    e.add_argument("--jobs", type=_positive)
    e.add_argument("--out")
    backend_flags(e)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="pretty-print a library, policy "
                       "dictionary or report file")
    i.add_argument("path")
    i.add_argument("--raw", action="store_true",
                   help="read a library with its own vocabulary")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else
                        logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CLIError as e:
        print(f"oplearn: error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
