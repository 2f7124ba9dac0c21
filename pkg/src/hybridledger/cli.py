"""Command-line entry point: run scenarios, check traces, sweep load."""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from importlib import resources
from pathlib import Path

from .invariants import check_trace, finality_waves
from .simnet import CorruptTrace, Scenario, ScenarioError, load_scenario, read_trace, run

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2
OUT_ENV = "HYBRIDLEDGER_OUT"


def bundled_scenarios() -> list[str]:
    root = resources.files("hybridledger") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_scenario(name_or_path: str) -> Scenario:
    path = Path(name_or_path)
    if not path.exists():
        bundled = resources.files("hybridledger") / "scenarios" / f"{name_or_path}.yaml"
        if not bundled.is_file():
            raise ScenarioError(f"no scenario file or bundled scenario named {name_or_path!r}")
        with resources.as_file(bundled) as p:
            return load_scenario(p)
    return load_scenario(path)


def _check_lines(checks: dict) -> list[str]:
    lines = []
    for name, res in checks.items():
        lines.append(f"{'PASS' if res['ok'] else 'FAIL'} {name}")
        for v in res["violations"][:5]:
            lines.append(f"     {json.dumps(v, sort_keys=True)}")
    return lines


def _notes(records) -> list[str]:
    notes = []
    equiv = [r for r in records if r["ev"] == "equivocate"]
    if equiv:
        certs = {r["tx"] for r in records if r["ev"] == "txcert"}
        both = [r for r in equiv if r["a"] in certs and r["b"] in certs]
        if not both:
            notes.append("no conflicting certificate formed; liveness deferred to next epoch")
        fresh = [r for r in records if r["ev"] == "fresh_settled"]
        if fresh:
            notes.append(f"object re-certified and settled in epoch {fresh[0]['epoch']}")
    waves = finality_waves(records)
    if waves:
        exact = sum(1 for w in waves if w["final"] - w["submit"] == w["wave1"] + w["wave2"])
        notes.append(f"owned finality = two request/response waves for {exact}/{len(waves)} txs")
    return notes


def cmd_run(args) -> int:
    try:
        sc = resolve_scenario(args.scenario)
        if args.seed is not None:
            sc.seed = args.seed
        sc.validate()
    except (ScenarioError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or os.environ.get(OUT_ENV) or "hybridledger-out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        print(f"error: cannot write to {out}: {e}", file=sys.stderr)
        return EXIT_USAGE

    result = run(sc)
    result.trace.write(out / "trace.ndjson")
    (out / "metrics.json").write_text(json.dumps(result.metrics, indent=2, sort_keys=True) + "\n")
    report = [f"scenario {sc.name} seed {sc.seed}"]
    report += [f"{k} = {v}" for k, v in sorted(result.metrics.items())]
    report += _check_lines(result.checks)
    report += _notes(result.trace.records)
    text = "\n".join(report) + "\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if result.ok else EXIT_VIOLATION


def cmd_verify(args) -> int:
    try:
        records = read_trace(args.trace)
    except (CorruptTrace, OSError) as e:
        print(f"error: corrupt trace: {e}", file=sys.stderr)
        return EXIT_USAGE
    checks = check_trace(records)
    print("\n".join(_check_lines(checks)))
    return EXIT_OK if all(c["ok"] for c in checks.values()) else EXIT_VIOLATION


def _scaled(sc: Scenario, load: int) -> Scenario:
    s = copy.deepcopy(sc)
    clients = []
    for spec in sc.clients:
        for i in range(load):
            c = copy.deepcopy(spec)
            c.name = f"{spec.name}-{i}"
            clients.append(c)
    s.clients = clients
    return s


def cmd_bench(args) -> int:
    try:
        sc = resolve_scenario(args.scenario)
        loads = [int(x) for x in args.loads.split(",") if x.strip()]
        if any(x < 0 for x in loads):
            raise ValueError("loads must be non-negative")
    except (ScenarioError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        sc.seed = args.seed
    cols = ("load", "settled", "final_p50", "final_p95", "settle_p50", "settle_p95",
            "cert/ktick", "ops/ktick", "checkpoints")
    print("  ".join(f"{c:>11}" for c in cols))
    ok = True
    for load in loads:
        r = run(_scaled(sc, load))
        ok &= r.ok
        m = r.metrics
        row = (load, m["settled"], m["finality_p50"], m["finality_p95"], m["settlement_p50"],
               m["settlement_p95"], round(m["cert_per_ktick"], 2), round(m["ops_per_ktick"], 2),
               m["checkpoints"])
        print("  ".join(f"{'-' if x is None else x:>11}" for x in row))
    return EXIT_OK if ok else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridledger",
                                description="Simulate the hybrid owned/shared object ledger.")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run-scenario", help="run a scenario and check safety invariants")
    r.add_argument("--scenario", required=True, help="YAML file or bundled scenario name")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./hybridledger-out)")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify-trace", help="re-check a stored trace offline")
    v.add_argument("--trace", required=True)
    v.set_defaults(fn=cmd_verify)

    b = sub.add_parser("bench", help="sweep client load and report latency/throughput")
    b.add_argument("--scenario", required=True)
    b.add_argument("--loads", default="1,2,4", help="comma-separated client multipliers")
    b.add_argument("--seed", type=int)
    b.set_defaults(fn=cmd_bench)

    sub.add_parser("list", help="list bundled scenarios").set_defaults(
        fn=lambda a: print("\n".join(bundled_scenarios())) or EXIT_OK)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
