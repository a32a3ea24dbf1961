"""Command-line front end: run scenarios, check traces, sweep parameter
grids, and print frame-structure tables.

Exit codes: 0 success, 1 parse/validation failure, 2 runtime invariant
breach (always a bug) or trace findings.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

from .engine import RunResult, Simulation, SimulationError
from .frame import derive_frame_structure
from .phy import McsTable
from .scenario import (
    ParseError,
    Scenario,
    ValidationError,
    apply_override,
    load,
    scenario_hash,
    validate_scenario,
)
from .trace import TraceWriter, check_trace, read_trace


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


def build_summary(sc: Scenario, result: RunResult) -> dict:
    flows = []
    for flow_id in sorted(result.flows):
        fr = result.flows[flow_id]
        flows.append(
            {
                "flow_id": flow_id,
                "class": fr.spec.qos_id,
                "delivered_bytes": fr.delivered_bytes,
                "goodput_bps": _sig6(fr.goodput_bps(result.stop_ns)),
                "delay_mean_ns": fr.delay_mean_ns,
                "delay_p80_ns": fr.delay_p80_ns,
                "delay_min_ns": fr.delay_min_ns,
                "delay_max_ns": fr.delay_max_ns,
                "sr_count": fr.sr_count,
                "generated_bytes": fr.generated_bytes,
                "dropped_bytes": fr.dropped_bytes,
            }
        )
    class_means = result.class_mean_delays()
    classes = [
        {"class": qos, "geo_mean_delay_ns": _sig6(mean)}
        for qos, mean in sorted(class_means.items())
    ]
    return {
        "meta": {"seed": sc.seed, "scenario_hash": scenario_hash(sc)},
        "flows": flows,
        "classes": classes,
        "empty_flows": result.empty_flows(),
    }


def load_with_overrides(path: str, overrides: list[str]) -> Scenario:
    sc = load(path)
    for ov in overrides:
        apply_override(sc, ov)
    if overrides:
        errors = validate_scenario(sc)
        if errors:
            raise ValidationError(errors)
    return sc


def run_scenario(sc: Scenario, out_dir: Path, tag: str = "") -> tuple[RunResult, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_name = sc.output.trace
    summary_name = sc.output.summary
    if tag:
        trace_name = f"{Path(trace_name).stem}_{tag}.csv"
        summary_name = f"{Path(summary_name).stem}_{tag}.json"
    trace_path = out_dir / trace_name
    mcs_tables = {
        p.bwp_id: McsTable.from_csv(p.mcs_table_path)
        for p in sc.deployment.parts
        if p.mcs_table_path
    }
    with open(trace_path, "w", newline="") as f:
        sim = Simulation(
            seed=sc.seed,
            stop_ns=sc.stop_ns,
            deployment=sc.deployment,
            ues=sc.ues,
            flows=sc.flows,
            channel=sc.channel,
            core=sc.core,
            trace=TraceWriter(f),
            mcs_tables=mcs_tables or None,
        )
        result = sim.run()
    summary_path = out_dir / summary_name
    with open(summary_path, "w") as f:
        json.dump(build_summary(sc, result), f, indent=2)
        f.write("\n")
    return result, summary_path


def cmd_run(args) -> int:
    try:
        sc = load_with_overrides(args.scenario, args.override)
    except (ParseError, ValidationError) as e:
        _print_config_errors(e)
        return 1
    try:
        _, summary_path = run_scenario(sc, Path(args.out_dir))
    except SimulationError as e:
        print(f"runtime invariant breach: {e}", file=sys.stderr)
        return 2
    print(f"wrote {summary_path}")
    return 0


def cmd_check(args) -> int:
    rows = read_trace(args.trace)
    findings = check_trace(rows)
    for f in findings:
        print(f)
    print(f"{len(findings)} findings in {len(rows)} rows")
    return 2 if findings else 0


def _parse_grid(spec: str) -> list[list[str]]:
    """'a=1,2;b=x,y' -> [['a=1','a=2'], ['b=x','b=y']]"""
    axes = []
    for axis in spec.split(";"):
        axis = axis.strip()
        if not axis:
            continue
        path, _, values = axis.partition("=")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not path or not vals:
            raise ValueError(f"bad grid axis {axis!r}")
        axes.append([f"{path.strip()}={v}" for v in vals])
    if not axes:
        raise ValueError("empty grid")
    return axes


def cmd_sweep(args) -> int:
    try:
        axes = _parse_grid(args.grid)
    except ValueError as e:
        print(e, file=sys.stderr)
        return 1
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, combo in enumerate(itertools.product(*axes)):
        try:
            sc = load_with_overrides(args.scenario, args.override + list(combo))
        except (ParseError, ValidationError) as e:
            _print_config_errors(e)
            return 1
        try:
            _, summary_path = run_scenario(sc, out_dir, tag=str(i))
        except SimulationError as e:
            print(f"runtime invariant breach in run {i}: {e}", file=sys.stderr)
            return 2
        manifest.append((i, list(combo), summary_path.name))
        print(f"run {i}: {' '.join(combo)} -> {summary_path.name}")
    with open(out_dir / "grid.csv", "w") as f:
        f.write("run,overrides,summary\n")
        for i, combo, name in manifest:
            f.write(f"{i},{' '.join(combo)},{name}\n")
    return 0


def cmd_print_frame(args) -> int:
    try:
        fs = derive_frame_structure(args.mu, args.bw)
    except ValueError as e:
        print(e, file=sys.stderr)
        return 1
    print(
        f"mu={fs.mu} scs_khz={fs.scs_hz // 1000} "
        f"slots_per_subframe={fs.slots_per_subframe} "
        f"slot_length_us={fs.slot_duration_ns / 1000:g} "
        f"symbols_per_slot={fs.symbols_per_slot} "
        f"symbol_length_us={fs.symbol_duration_ns / 1000:g} "
        f"subcarriers_per_prb={fs.subcarriers_per_prb} "
        f"subframes_per_frame={fs.subframes_per_frame} "
        f"prb_count={fs.prb_count} rbg_size={fs.rbg_size}"
    )
    return 0


def _print_config_errors(e: Exception) -> None:
    if isinstance(e, ValidationError):
        for msg in e.errors:
            print(f"validation: {msg}", file=sys.stderr)
    else:
        print(f"parse: {e}", file=sys.stderr)


def _parse_bw(raw: str) -> int:
    from .scenario import parse_hz

    return parse_hz(raw)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nrsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario, write trace.csv and summary.json")
    p_run.add_argument("scenario")
    p_run.add_argument("--override", action="append", default=[], metavar="PATH=VALUE")
    p_run.add_argument("--out-dir", default=".")
    p_run.set_defaults(fn=cmd_run)

    p_check = sub.add_parser("check", help="validate invariants over a trace file")
    p_check.add_argument("trace")
    p_check.set_defaults(fn=cmd_check)

    p_sweep = sub.add_parser("sweep", help="run a cartesian override grid")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--grid", required=True, metavar="PATH=V1,V2;PATH2=...")
    p_sweep.add_argument("--override", action="append", default=[], metavar="PATH=VALUE")
    p_sweep.add_argument("--out-dir", default="sweep_out")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_frame = sub.add_parser("print-frame", help="dump frame-structure quantities")
    p_frame.add_argument("--mu", type=int, required=True)
    p_frame.add_argument("--bw", type=_parse_bw, required=True, help="e.g. 100MHz")
    p_frame.set_defaults(fn=cmd_print_frame)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
