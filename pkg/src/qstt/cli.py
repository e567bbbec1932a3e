"""Command line entry points.

qstt run --scenario PATH [--seed N] [--out DIR] [--from-events CSV]
    Simulate (or replay) a pass and write the artifact set. Exit 0 when
    the session verdict is secure, 2 when compromised, 1 on operational
    errors or an insufficient-data verdict.

qstt report --out DIR
    Summarize a run from its artifacts and render the figure set next to
    them.

qstt attack-sweep --scenario PATH [--steps N] [--max-delay S] [--out DIR]
    Grid of delay attacks against one scenario; tabulates induced shifts
    and checks that everything beyond the alert-limit bound is flagged.
    Exit 2 when a pair escapes the bound.

qstt schema
    Print the scenario file reference.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .estimator import EstimationError
from .pairing import PairingError
from .pipeline import REPORT_JSON, delay_attack_sweep, run_session
from .plots import render_report_figures
from .scenario import ConfigError, load_scenario, scenario_schema
from .security import VERDICT_COMPROMISED, VERDICT_SECURE, summarize

log = logging.getLogger(__name__)

SWEEP_CSV_HEADER = ["delay_down_s", "delay_up_s", "delta_tau_s",
                    "delta_range_m", "flagged", "bound_ok"]


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario, seed_override=args.seed)
    out = args.out or f"run-{scenario.name}-seed{scenario.seed}"
    result = run_session(scenario, out_dir=out, events_in=args.from_events)
    with open(os.path.join(out, "scenario.schema"), "w", newline="") as fh:
        fh.write(scenario_schema())
    m = result.metrics
    print(f"scenario: {scenario.name} (seed {scenario.seed})")
    print(f"quadruples: {m['n_quadruples']} "
          f"({m['quadruple_rate_hz']:.0f} per second)")
    if m["windows_solved"]:
        print(f"residual RMS: downlink {m['rms_down_ps']:.0f} ps, "
              f"uplink {m['rms_up_ps']:.0f} ps")
    print(f"new key bits: {m['key_bits']}")
    print(summarize(result.report))
    print(f"artifacts: {out}")
    verdict = result.report.verdict
    if verdict == VERDICT_SECURE:
        return 0
    return 2 if verdict == VERDICT_COMPROMISED else 1


def _cmd_report(args) -> int:
    path = os.path.join(args.out, REPORT_JSON)
    if not os.path.exists(path):
        print(f"error: no {REPORT_JSON} in {args.out}", file=sys.stderr)
        return 1
    with open(path) as fh:
        doc = json.load(fh)
    session = doc.get("session", {})
    metrics = doc.get("metrics", {})
    print(f"scenario: {doc.get('scenario')} (seed {doc.get('seed')})")
    print(f"verdict: {session.get('verdict')}")
    print(session.get("summary", ""))
    for key in ("n_quadruples", "rms_down_ps", "rms_up_ps", "mean_qber",
                "key_bits", "frames_authentic"):
        if metrics.get(key) is not None:
            print(f"{key}: {metrics[key]}")
    threshold = doc.get("policy", {}).get("qber_threshold")
    n_np = doc.get("estimator", {}).get("normal_point_n", 300)
    figures = render_report_figures(args.out, qber_threshold=threshold,
                                    normal_point_n=n_np)
    for fig_path in figures:
        print(f"figure: {fig_path}")
    return 0


def _cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario, seed_override=args.seed)
    delays = np.linspace(0.0, args.max_delay, args.steps)
    rows = delay_attack_sweep(scenario, delays, delays)
    lines = [",".join(SWEEP_CSV_HEADER)]
    for r in rows:
        lines.append(",".join([
            f"{r['delay_down_s']:.12e}", f"{r['delay_up_s']:.12e}",
            f"{r['delta_tau_s']:.12e}", f"{r['delta_range_m']:.6f}",
            str(int(r["flagged"])), str(int(r["bound_ok"])),
        ]))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "sweep.csv")
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"table: {path}")
    else:
        print("\n".join(lines))
    bad = [r for r in rows if not r["bound_ok"]]
    flagged = sum(r["flagged"] for r in rows)
    print(f"{len(rows)} delay pairs, {flagged} flagged, "
          f"{len(bad)} escaped the detection bound")
    return 2 if bad else 0


def _cmd_schema(_args) -> int:
    print(scenario_schema())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qstt",
        description="Satellite quantum-secured time transfer simulator")
    parser.add_argument("--verbose", action="store_true",
                        help="log processing stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate or replay one pass")
    p_run.add_argument("--scenario", required=True, help="scenario file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="artifact directory")
    p_run.add_argument("--from-events", default=None, metavar="CSV",
                       help="replay from an event log instead of simulating")
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("report", help="summarize a finished run")
    p_rep.add_argument("--out", required=True, help="artifact directory")
    p_rep.set_defaults(func=_cmd_report)

    p_sweep = sub.add_parser("attack-sweep",
                             help="delay-attack grid against one scenario")
    p_sweep.add_argument("--scenario", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--steps", type=int, default=10)
    p_sweep.add_argument("--max-delay", type=float, default=10e-9,
                         metavar="SECONDS")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_schema = sub.add_parser("schema", help="print the scenario reference")
    p_schema.set_defaults(func=_cmd_schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PairingError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
