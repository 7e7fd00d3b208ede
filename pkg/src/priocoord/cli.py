"""Command line: run scenarios, verify traces, summarize runs.

Exit status is 0 on success, 1 when a safety or liveness monitor fails and 2
for configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys
from pathlib import Path

import numpy as np

from . import scenario
from .monitors import TraceError, verify
from .scenario import ConfigError, ScenarioConfig
from .simulator import MonitorViolation, occupancy, read_trace, run, summarize, write_trace

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2


def _err(msg: str) -> None:
    print(f"priocoord: {msg}", file=sys.stderr)


def _config_from_args(args) -> ScenarioConfig:
    cfg = scenario.resolve(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.horizon is not None:
        changes["horizon"] = args.horizon
    if args.arrival_rate is not None:
        changes["arrival_rate"] = args.arrival_rate
    if args.p is not None:
        changes["p"] = args.p
    if args.q is not None:
        changes["q"] = args.q
    if args.drain_after is not None:
        changes["drain_after"] = args.drain_after
    return cfg.replace(**changes) if changes else cfg


def _trace_path(template: str | None, seed: int, batch: bool) -> Path | None:
    if template is None:
        return None
    if "{seed}" in template:
        return Path(template.format(seed=seed))
    if not batch:
        return Path(template)
    p = Path(template)
    return p.with_name(f"{p.stem}.seed{seed}{p.suffix}")


def _run_one(job: tuple) -> dict:
    """Run one seed; write its trace; return metrics and the violation, if any."""
    cfg, trace_path, check = job
    violation = None
    try:
        res = run(cfg, record=trace_path is not None, check=check)
    except MonitorViolation as exc:
        res = exc.result
        violation = exc.violation.to_dict()
    if trace_path is not None:
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        with open(trace_path, "w") as f:
            write_trace(res.trace, f)
    return {"seed": cfg.seed, "metrics": res.metrics, "violation": violation}


def cmd_run(args) -> int:
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    n = args.batch or 1
    if n < 1:
        _err("--batch needs a positive count")
        return EXIT_CONFIG
    seeds = [cfg.seed + k for k in range(n)]
    jobs = [(cfg.replace(seed=s), _trace_path(args.trace, s, n > 1), not args.no_check) for s in seeds]
    workers = min(n, args.jobs or os.cpu_count() or 1)
    if workers > 1:
        with multiprocessing.get_context("spawn").Pool(workers) as pool:
            results = pool.map(_run_one, jobs)
    else:
        results = [_run_one(j) for j in jobs]
    results.sort(key=lambda r: r["seed"])
    status = EXIT_OK
    for r in results:
        if r["violation"] is not None:
            v = r["violation"]
            _err(f"seed {r['seed']}: {v['monitor']} violation at slot {v['slot']} (robots {v['robots']}): {v['detail']}")
            status = EXIT_VIOLATION
    doc = results[0]["metrics"] if n == 1 else {"runs": [r["metrics"] for r in results]}
    if n == 1 and results[0]["violation"] is not None:
        doc = dict(doc, violation=results[0]["violation"])
    elif n > 1:
        doc["violations"] = {str(r["seed"]): r["violation"] for r in results if r["violation"] is not None}
    if args.metrics:
        Path(args.metrics).parent.mkdir(parents=True, exist_ok=True)
        Path(args.metrics).write_text(json.dumps(doc, indent=2) + "\n")
    else:
        print(json.dumps(doc, indent=2))
    return status


def _load_trace(path: str) -> list:
    try:
        with open(path) as f:
            return read_trace(f)
    except OSError as exc:
        raise TraceError(f"cannot read {path}: {exc.strerror}") from None


def cmd_verify(args) -> int:
    try:
        trace = _load_trace(args.trace)
        if not trace:
            raise TraceError("empty trace")
        if args.config is not None:
            cfg = scenario.resolve(args.config)
        else:
            cfg = scenario.from_dict(trace[0].get("config", {}))
        report = verify(trace, cfg)
    except (ConfigError, TraceError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print("\n".join(report.lines()))
    return EXIT_OK if report.ok else EXIT_VIOLATION


def _chart(occ: np.ndarray, width: int = 60, rows: int = 40) -> list[str]:
    """Plain-text bar chart of area occupancy, one row per slot bucket."""
    if occ.shape[0] == 0:
        return ["(no slots)"]
    edges = np.linspace(0, occ.shape[0], min(rows, occ.shape[0]) + 1).astype(int)
    top = max(int(occ.max()), 1)
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        m = float(occ[a:b].mean())
        out.append(f"{a:6d}-{b - 1:<6d} {'#' * round(width * m / top):<{width}s} {m:5.1f}")
    return out


def _summary_lines(doc: dict) -> list[str]:
    lines = [
        f"scenario {doc['scenario']}  seed {doc['seed']}  slots {doc['slots']}",
        f"robots: spawned {doc['spawned']}, accepted {doc['accepted']}, exited {doc['exited']}",
        f"throughput {doc['throughput']:.4f} robots/slot; rejections {doc['rejections']}"
        f" ({doc['rejected_robots']} robots)",
    ]
    for key, label in (("travel_time", "travel time in area"), ("total_time", "time from spawn"), ("acceptance_latency", "acceptance latency")):
        st = doc[key]
        if st["count"]:
            lines.append(
                f"{label}: mean {st['mean']:.2f}, p50 {st['p50']:.1f}, p95 {st['p95']:.1f}, "
                f"min {st['min']:.0f}, max {st['max']:.0f} slots (n={st['count']})"
            )
        else:
            lines.append(f"{label}: no samples")
    if doc["queue"]:
        lines.append("queue per path (max / mean):")
        for p, q in doc["queue"].items():
            lines.append(f"  {p:8s} {q['max']:4d} / {q['mean']:.2f}")
    ia = doc["in_area_controls"]
    lines.append(
        f"in-area controls at full throttle: {ia['full_throttle']} of {ia['count']}"
        f" ({ia['robots_always_full_throttle']} of {ia['robots']} robots always)"
    )
    if doc.get("drained_at") is not None:
        lines.append(f"drained at slot {doc['drained_at']}")
    return lines


def cmd_summarize(args) -> int:
    try:
        trace = _load_trace(args.trace)
        doc = summarize(trace)
    except (ConfigError, TraceError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.json:
        print(json.dumps(doc, indent=2))
    else:
        print("\n".join(_summary_lines(doc)))
    if args.chart:
        print("in-area occupancy per slot:")
        print("\n".join(_chart(occupancy(trace))))
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in scenario.preset_names():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="priocoord", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario")
    r.add_argument("--config", default="cross8", help="preset name or scenario JSON file (default: cross8)")
    r.add_argument("--seed", type=int)
    r.add_argument("--trace", help="JSON-Lines trace output; with --batch, '{seed}' in the name is replaced")
    r.add_argument("--metrics", help="metrics JSON output (default: stdout)")
    r.add_argument("--horizon", type=int)
    r.add_argument("--arrival-rate", type=float)
    r.add_argument("--p", type=float, help="probability of switching to the braking regime")
    r.add_argument("--q", type=float, help="probability of leaving the braking regime")
    r.add_argument("--drain-after", type=int, help="stop arrivals and perturbations at this slot and drain")
    r.add_argument("--batch", type=int, help="run this many consecutive seeds concurrently")
    r.add_argument("--jobs", type=int, help="worker processes for --batch (default: CPU count)")
    r.add_argument("--no-check", action="store_true", help="skip the online monitors")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="replay a trace through the monitors")
    v.add_argument("--trace", required=True)
    v.add_argument("--config", help="scenario the trace must belong to (default: the one in its header)")
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("summarize", help="metrics recomputed from a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--json", action="store_true")
    s.add_argument("--chart", action="store_true", help="also print a text chart of area occupancy")
    s.set_defaults(func=cmd_summarize)

    p = sub.add_parser("presets", help="list shipped scenario presets")
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
