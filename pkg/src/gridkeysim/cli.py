"""``gridkeysim`` command line: run scenarios, the attack suite and scaling benchmarks.

Exit codes: 0 success, 1 a scenario assertion or golden comparison failed,
2 usage or parse error. The seed falls back to ``$GRIDKEYSIM_SEED``, then 0.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bgkm, threats
from .errors import GridKeySimError, ScenarioError, UnknownScenario
from .netsim import load_scenario, run_scenario
from .primitives import seed_from

SEED_ENV = "GRIDKEYSIM_SEED"


class UsageError(Exception):
    pass


def _seed(arg: Optional[str]) -> str:
    value = arg if arg is not None else os.environ.get(SEED_ENV, "0")
    try:
        seed_from(int(value) if value.isdigit() else value)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad seed {value!r}: {exc}") from None
    return value


def _seed_value(text: str):
    return int(text) if text.isdigit() else text


def _write(out: Optional[str], name: str, lines: List[str]) -> None:
    if out is None:
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / name).write_text("".join(line + "\n" for line in lines))


def cmd_run(args) -> int:
    seed = _seed(args.seed)
    scenario = load_scenario(args.scenario, args.backend)
    sim = run_scenario(scenario, _seed_value(seed))
    failures = sim.assertion_failures
    status = 1 if failures else 0
    report = [
        f"scenario={scenario.scenario_id}",
        f"seed={seed}",
        f"backend={sim.params.backend.name.lower()}",
        f"events={len(sim.log)}",
        f"assertion_failures={len(failures)}",
        f"exit_status={status}",
    ]
    if args.out:
        report.append("event_log=events.log")
    _write(args.out, "events.log", sim.log_lines())
    _write(args.out, "metrics.txt", sim.metrics.to_lines())
    _write(args.out, "report.txt", report + [f"failure={f}" for f in failures])
    for line in report + sim.metrics.to_lines():
        print(line)
    for f in failures:
        print(f"ASSERTION_FAILED {f}", file=sys.stderr)
    return status


def _parse_modes(items: List[str]) -> dict:
    modes = {}
    for item in items or []:
        for part in item.split(","):
            if "=" not in part:
                raise UsageError(f"mode flags look like key=value, got {part!r}")
            k, v = part.split("=", 1)
            if k in modes and modes[k] != v:
                raise UsageError(f"contradictory mode flags: {k}={modes[k]} and {k}={v}")
            modes[k] = v
    return modes


def cmd_attack(args) -> int:
    seed = _seed(args.seed)
    ids = None if args.suite == "all" else [s for s in args.suite.split(",") if s]
    modes = _parse_modes(args.mode)
    try:
        reports = threats.run_suite(ids, seed=_seed_value(seed), modes=modes or None)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    rows = [r.row() for r in reports]
    for row in rows:
        print(row)
    _write(args.out, "verdicts.tsv", rows)
    _write(args.out, "reports.jsonl", [r.record() for r in reports])
    _write(args.out, "events.log", [f"{r.scenario_id}[{r.mode_text}]\t{line}" for r in reports for line in r.log])
    if args.golden:
        want = [l for l in Path(args.golden).read_text().splitlines() if l.strip()]
        if want != rows:
            for line in sorted(set(want) ^ set(rows)):
                print(f"GOLDEN_MISMATCH {line}", file=sys.stderr)
            return 1
    return 0


def bench_size(n: int, backend: bgkm.Backend, seed: bytes, der_samples: int = 32) -> dict:
    params = bgkm.SecurityParams()
    st = bgkm.setup(params, seed, backend)
    for i in range(n):
        bgkm.sec_gen(st, f"M{i:05d}")
    ids = list(st.secrets)
    t0 = time.perf_counter()
    key, pub = bgkm.key_gen(st, ids)
    t_gen = time.perf_counter() - t0
    sample = ids[:: max(1, n // der_samples)][:der_samples]
    t0 = time.perf_counter()
    for mid in sample:
        if bgkm.key_der(st.secrets[mid], pub, params) != key:
            raise AssertionError(f"{mid} derived the wrong key at n={n}")
    t_der = (time.perf_counter() - t0) / len(sample)
    body = pub.body_size
    wire = len(pub.to_bytes())
    t_rekey = 0.0
    if n > 1:
        bgkm.remove_member(st, ids[-1])
        t0 = time.perf_counter()
        bgkm.re_key(st, ids[:-1])
        t_rekey = time.perf_counter() - t0
    return {"n": n, "pubinfo_bytes": wire, "body_bytes": body, "key_gen_s": t_gen,
            "key_der_s": t_der, "re_key_s": t_rekey}


def size_fit_r2(ns, sizes) -> float:
    x = np.asarray(ns, dtype=float)
    y = np.asarray(sizes, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    return 1.0 if total == 0 else float(1 - np.sum(resid ** 2) / total)


def cmd_bench(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError:
        raise UsageError(f"bad --sizes {args.sizes!r}") from None
    if not sizes or min(sizes) < 1:
        raise UsageError("sizes must be positive integers")
    seed = seed_from(_seed_value(_seed(args.seed)))
    rows = [bench_size(n, args.backend, seed) for n in sizes]
    lines = ["n\tpubinfo_bytes\tbody_bytes\tkey_gen_s\tkey_der_s\tre_key_s"]
    for r in rows:
        lines.append(f"{r['n']}\t{r['pubinfo_bytes']}\t{r['body_bytes']}\t"
                     f"{r['key_gen_s']:.6f}\t{r['key_der_s']:.6f}\t{r['re_key_s']:.6f}")
    if len(rows) >= 2:
        lines.append(f"r2_pubinfo={size_fit_r2([r['n'] for r in rows], [r['pubinfo_bytes'] for r in rows]):.6f}")
    lines.append(f"backend={args.backend.name.lower()}")
    for line in lines:
        print(line)
    _write(args.out, "bench.tsv", lines)
    return 0


def _backend(text: str) -> bgkm.Backend:
    try:
        return bgkm.Backend.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridkeysim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a scenario file")
    r.add_argument("scenario")
    r.add_argument("--seed")
    r.add_argument("--backend", type=_backend, help="acp or lock; overrides the scenario")
    r.add_argument("--out", help="directory for events.log, metrics.txt, report.txt")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("attack", help="run the attack suite")
    a.add_argument("--suite", default="all", help="'all' or comma-separated scenario ids")
    a.add_argument("--mode", action="append", default=[], help="key=value, repeatable")
    a.add_argument("--seed")
    a.add_argument("--out")
    a.add_argument("--golden", help="verdict file to compare against")
    a.set_defaults(func=cmd_attack)

    b = sub.add_parser("bench", help="time BGKM operations over group sizes")
    b.add_argument("--sizes", default="8,64,512,1024")
    b.add_argument("--backend", type=_backend, default=bgkm.Backend.ACP)
    b.add_argument("--seed")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"PARSE_ERROR {exc}", file=sys.stderr)
        return 2
    except UnknownScenario as exc:
        print(f"UNKNOWN_SCENARIO {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (GridKeySimError, OSError) as exc:
        print(f"{getattr(exc, 'code', 'ERROR')} {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
