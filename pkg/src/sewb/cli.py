"""Command line entry point: ``run``, ``suite`` and ``validate``.

Exit codes: 0 success without violations, 2 task failure, 3 safety
violation, 4 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from .scenario import (
    BUNDLED,
    RunSummary,
    ScenarioError,
    dump,
    load_scenario,
    normalize,
    parse_assignment,
    read_raw,
)
from .sim import run_scenario, summary_text, write_trace

EXIT_OK, EXIT_TASK, EXIT_SAFETY, EXIT_CONFIG = 0, 2, 3, 4
SUITE_COLUMNS = ["scenario", "mode", "sweep", "success", "completion_time", "min_distance", "mean_iterations", "exit_code"]

log = logging.getLogger("sewb")


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_CONFIG


def execute(name: str, overrides=(), mode: str | None = None, out: str | Path | None = None) -> RunSummary:
    """Load, run and (optionally) write outputs for one scenario."""
    sc = load_scenario(name, list(overrides), mode)
    records, sim = run_scenario(sc, sc.model)
    summary = RunSummary(sc.id, sc.mode, sc.param_hash, sim)
    trace_path = sc.output.get("trace")
    summary_path = sc.output.get("summary")
    if out is not None:
        run_dir = Path(out)
        run_dir.mkdir(parents=True, exist_ok=True)
        trace_path = run_dir / "trace.csv"
        summary_path = run_dir / "summary.txt"
    if trace_path:
        write_trace(trace_path, sc.model, records)
    if summary_path:
        Path(summary_path).write_text(summary_text(summary.items()))
        Path(summary_path).with_name("timing.txt").write_text(summary_text(summary.timing_items()))
    return summary


def cmd_run(args) -> int:
    try:
        overrides = [parse_assignment(s) for s in args.set or []]
        out = args.out
        if out is not None:
            out = Path(out) / f"{Path(str(args.scenario)).stem}_{args.mode or 'default'}"
        summary = execute(args.scenario, overrides, args.mode, out)
    except ScenarioError as exc:
        return _fail(str(exc))
    print(summary_text(summary.items() + summary.timing_items()), end="")
    return summary.exit_code


def _parse_sweep(text: str) -> tuple[list[str], list]:
    """``d_b+d_m=0.2,0.25`` sets both keys to each value in turn."""
    if "=" not in text:
        raise ScenarioError(f"--sweep expects key=v1,v2,..., got {text!r}")
    keys, values = text.split("=", 1)
    vals = [yaml.safe_load(v) for v in values.split(",") if v.strip()]
    if not vals:
        raise ScenarioError("--sweep needs at least one value")
    return [k.strip() for k in keys.split("+")], vals


def read_list(path: str) -> list[str]:
    p = Path(path)
    if not p.exists():
        bundled = BUNDLED / f"{path}.txt"
        if not bundled.exists():
            raise ScenarioError(f"suite list {path!r} not found")
        p = bundled
    names = []
    for line in p.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.append(line)
    if not names:
        raise ScenarioError(f"suite list {path!r} is empty")
    base = p.parent
    return [str(base / n) if (base / n).exists() else n for n in names]


def _suite_job(job):
    name, overrides, mode, out = job
    try:
        s = execute(name, overrides, mode, out)
    except ScenarioError as exc:
        return name, mode, None, str(exc)
    return name, mode, s, None


def cmd_suite(args) -> int:
    try:
        names = read_list(args.list)
        sweep_keys, sweep_vals = _parse_sweep(args.sweep) if args.sweep else ([], [None])
        base = [parse_assignment(s) for s in args.set or []]
        for n in names:  # validate everything before running anything
            normalize(read_raw(n))
    except ScenarioError as exc:
        return _fail(str(exc))
    modes = args.mode or [None]
    jobs, labels = [], []
    out_root = Path(args.out) if args.out else None
    for n in names:
        for mode in modes:
            for v in sweep_vals:
                ov = base + [(k, v) for k in sweep_keys]
                label = "+".join(sweep_keys) + f"={v}" if sweep_keys else ""
                out = None
                if out_root is not None:
                    tag = f"{Path(n).stem}_{mode or 'default'}" + (f"_{label}" if label else "")
                    out = out_root / tag.replace("=", "-").replace("+", "_")
                jobs.append((n, ov, mode, out))
                labels.append(label)
    workers = max(1, min(args.jobs or os.cpu_count() or 1, len(jobs)))
    if workers == 1:
        results = [_suite_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_suite_job, jobs))

    rows, timing, code = [], [], EXIT_OK
    for (name, mode, s, err), label in zip(results, labels):
        if err is not None:
            print(f"error: {name}: {err}", file=sys.stderr)
            code = max(code, EXIT_CONFIG)
            continue
        sim = s.sim
        rows.append([s.scenario, s.mode, label, sim.success, sim.completion_time, round(sim.min_distance, 9),
                     round(sim.mean_iterations, 6), s.exit_code])
        timing.append([s.scenario, s.mode, label, round(sim.mean_solve_ms, 4)])
        code = max(code, s.exit_code)
    w = csv.writer(sys.stdout)
    w.writerow(SUITE_COLUMNS + ["mean_solve_ms"])
    for r, t in zip(rows, timing):
        w.writerow(r + [t[-1]])
    if out_root is not None:
        out_root.mkdir(parents=True, exist_ok=True)
        with open(out_root / "suite.csv", "w", newline="") as fh:
            cw = csv.writer(fh)
            cw.writerow(SUITE_COLUMNS)
            cw.writerows(rows)
        with open(out_root / "suite_timing.csv", "w", newline="") as fh:
            cw = csv.writer(fh)
            cw.writerow(["scenario", "mode", "sweep", "mean_solve_ms"])
            cw.writerows(timing)
    return code


def cmd_validate(args) -> int:
    try:
        data = normalize(read_raw(args.scenario))
        load_scenario(args.scenario)
    except ScenarioError as exc:
        return _fail(str(exc))
    if args.print:
        print(dump(data), end="")
    else:
        print(f"{data['id']}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sewb", description="Run mobile-manipulator avoidance scenarios.")
    p.add_argument("-v", "--verbose", action="store_true", help="log controller events")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--scenario", required=True, help="scenario file or bundled name")
    r.add_argument("--mode", choices=["sewb", "cbf-only", "unconstrained"])
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario key")
    r.add_argument("--out", help="directory for trace.csv, summary.txt and timing.txt")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run a list of scenarios")
    s.add_argument("--list", required=True, help="text file with one scenario per line, or a bundled list name")
    s.add_argument("--sweep", help="KEY[+KEY...]=v1,v2,... run once per value")
    s.add_argument("--mode", action="append", choices=["sewb", "cbf-only", "unconstrained"])
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", help="directory for per-run outputs and suite.csv")
    s.add_argument("--jobs", type=int, help="parallel worker processes (default: CPU count)")
    s.set_defaults(func=cmd_suite)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.add_argument("--print", action="store_true", help="print the normalized scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
