"""Command line front end: ``simulate``, ``aggregate`` and ``circuit``.

Exit codes: 0 on completion, 1 on other library errors (for example an
empty aggregation input), 2 on configuration errors, 3 when a protocol
precondition fails.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .errors import ConfigError, PreconditionViolated, RadioNetError
from .harness import (PRESETS, PROTOCOLS, Scenario, aggregate, dumps_record, preset,
                      read_jsonl, run_scenario, validate, write_csv)

MODELS = ("strong-cd", "sender-cd", "receiver-cd", "no-cd")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed base; trial t uses seed + t")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", help="JSON Lines output path (stdout when omitted)")
    p.add_argument("--csv", help="also write a CSV with the documented column order")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radionet", description="Single-hop radio network experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run Monte-Carlo trials of one protocol")
    sim.add_argument("--protocol", choices=PROTOCOLS)
    sim.add_argument("--preset", choices=sorted(PRESETS), help="run a built-in scenario list")
    sim.add_argument("--model", default="sender-cd", choices=MODELS)
    sim.add_argument("--big-n", type=int, help="ID space size N")
    size = sim.add_mutually_exclusive_group()
    size.add_argument("--n", type=int, help="active devices (population for randomized protocols)")
    size.add_argument("--density", type=float, help="active fraction c of N")
    sim.add_argument("--schedule", default="geometric:2",
                     help="geometric:G, poly:EPS, exp:BASE or double-exp:EPS")
    sim.add_argument("--d1", type=int, default=14, help="first checkpoint d_1")
    sim.add_argument("--slot-limit", type=int)
    sim.add_argument("--n-tilde", type=float, help="size guess for test_network_size and circuit")
    sim.add_argument("--c-id", type=float, default=40.0)
    sim.add_argument("--beta", type=int, default=5)
    sim.add_argument("--preprocess", action="store_true", help="det_leader_election preprocessing")
    _add_common(sim)

    agg = sub.add_parser("aggregate", help="summarize a JSON Lines record file")
    agg.add_argument("--in", dest="path", required=True)

    circ = sub.add_parser("circuit", help="simulate a circuit file on the channel")
    circ.add_argument("--file", required=True)
    circ.add_argument("--n-tilde", type=float, required=True)
    circ.add_argument("--model", default="sender-cd", choices=("sender-cd", "no-cd"))
    circ.add_argument("--n", type=int, help="devices (default: round(n-tilde))")
    circ.add_argument("--inputs", help="input bits such as 0110 (random per trial when omitted)")
    circ.add_argument("--c-m", type=float, default=3.0)
    _add_common(circ)
    return parser


def _emit(scenarios: list, args) -> None:
    # validate everything before the first trial
    for s in scenarios:
        validate(s)
    out = open(args.out, "w", encoding="utf-8", newline="\n") if args.out else sys.stdout
    kept = [] if args.csv else None
    try:
        for s in scenarios:
            for rec in run_scenario(s):
                out.write(dumps_record(rec) + "\n")
                if kept is not None:
                    kept.append(rec)
    finally:
        if out is not sys.stdout:
            out.close()
    if kept is not None:
        write_csv(kept, args.csv)


def _simulate(args) -> None:
    if args.preset:
        if args.protocol:
            raise ConfigError("give --protocol or --preset, not both", "preset")
        scenarios = [replace(s, seed=args.seed) for s in preset(args.preset)]
        if args.trials != 1:
            scenarios = [replace(s, trials=args.trials) for s in scenarios]
        _emit(scenarios, args)
        return
    if not args.protocol:
        raise ConfigError("required unless --preset is given", "protocol")
    s = Scenario(protocol=args.protocol, model=args.model, big_n=args.big_n, n=args.n,
                 density=args.density, seed=args.seed, trials=args.trials,
                 schedule=args.schedule, d1=args.d1, c_id=args.c_id, beta=args.beta,
                 slot_limit=args.slot_limit, n_tilde=args.n_tilde, preprocess=args.preprocess,
                 out=args.out)
    _emit([s], args)


def _circuit(args) -> None:
    n = args.n if args.n is not None else round(args.n_tilde)
    s = Scenario(protocol="circuit", model=args.model, n=n, seed=args.seed, trials=args.trials,
                 n_tilde=args.n_tilde, c_m=args.c_m, circuit=args.file, inputs=args.inputs,
                 out=args.out)
    _emit([s], args)


def _aggregate(args) -> None:
    try:
        records = read_jsonl(args.path)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.path}: {exc.strerror}", "in") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.path} line {exc.lineno}: not JSON", "in") from None
    print(json.dumps(aggregate(records)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"simulate": _simulate, "aggregate": _aggregate, "circuit": _circuit}[args.command]
    try:
        handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PreconditionViolated as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return 3
    except RadioNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
