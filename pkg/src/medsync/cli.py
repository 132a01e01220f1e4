"""Command-line runner: execute scenarios, verify dumps, replay chains.

Exit codes: 0 all checks passed, 1 convergence/verification failure,
2 scenario or usage errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    MaxTicksExceeded,
    ScenarioError,
    SimulationError,
    dump,
    load_dump,
    load_scenario,
    run,
    verify_convergence,
)
from .ledger import Chain, ChainCorrupt
from .relational import canonical_json


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    config = scenario.config
    if args.max_ticks is not None:
        config = replace(config, max_ticks=args.max_ticks)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    scenario = replace(scenario, config=config)

    try:
        world = run(scenario)
    except (MaxTicksExceeded, SimulationError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 1

    report = verify_convergence(world)
    for line in report.lines():
        print(line)
    print(f"quiescent after {world.clock} ticks, {len(world.chain.blocks)} blocks")

    if args.dump:
        dump(world, args.dump)
        print(f"state dumped to {args.dump}")
    if args.trace:
        trace_path = Path(args.trace)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        trace_path.write_bytes(
            b"".join(canonical_json(e.to_json_dict()) + b"\n" for e in world.trace)
        )
        print(f"trace written to {args.trace}")
    return 0 if report.ok else 1


def _cmd_verify(args: argparse.Namespace) -> int:
    try:
        world = load_dump(args.dump_dir)
    except ScenarioError as exc:
        print(f"dump error: {exc}", file=sys.stderr)
        return 2
    except ChainCorrupt as exc:
        print(f"[FAIL] chain: {exc}")
        return 1

    ok = True
    try:
        replayed = world.chain.replay()
    except ChainCorrupt as exc:
        print(f"[FAIL] chain-replay: {exc}")
        return 1
    if replayed.canonical_bytes() == world.contract.canonical_bytes():
        print("[PASS] replay-matches-contract")
    else:
        print("[FAIL] replay-matches-contract: replayed state differs from the dumped one")
        ok = False

    report = verify_convergence(world)
    for line in report.lines():
        print(line)
    return 0 if ok and report.ok else 1


def _cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.chain)
    try:
        data = path.read_bytes()
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return 2
    try:
        chain = Chain.loads(data)
        state = chain.replay()
    except ChainCorrupt as exc:
        print(f"[FAIL] chain: {exc}")
        return 1
    sys.stdout.write(state.canonical_bytes().decode("utf-8") + "\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="medsync",
        description="Deterministic multi-peer simulator for lens-synchronized shared tables "
        "with ledger-enforced update permissions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario to quiescence and verify convergence")
    p_run.add_argument("scenario", help="path to a scenario JSON file")
    p_run.add_argument("--max-ticks", type=int, default=None)
    p_run.add_argument("--dump", metavar="DIR", default=None, help="write a state dump")
    p_run.add_argument("--trace", metavar="FILE", default=None, help="write the trace log")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="re-check a state dump: chain, replay, convergence")
    p_verify.add_argument("dump_dir")
    p_verify.set_defaults(func=_cmd_verify)

    p_replay = sub.add_parser("replay", help="rebuild the contract state from a chain dump")
    p_replay.add_argument("chain")
    p_replay.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
