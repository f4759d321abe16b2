"""Command-line entry point.

`racenav run <scenario.json>` executes a scenario file, writes the CSV
trace, and prints a single-line JSON summary on stdout (logs on stderr).
`racenav validate` checks a scenario without simulating; `racenav
acceptance` runs the built-in acceptance suite.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys

from racenav import acceptance, sim


@dataclasses.dataclass(frozen=True)
class RunSummary:
    scenario: str
    completed: bool
    off_track: bool
    time_in_emergency_s: float
    max_delta_m: float | None
    min_obstacle_clearance_m: float | None
    max_lateral_offset_m: float
    seed: int


def summarize(result: sim.SimResult) -> RunSummary:
    sc = result.scenario
    recs = result.records
    dt = 1.0 / sc.rates.tick_hz
    emergency_s = dt * sum(1 for r in recs if r.status == "emergency")
    deltas = [
        abs(d) for r in recs for d in r.deltas if d is not None and math.isfinite(d)
    ]
    if sc.obstacles:
        clearance = min(
            min(
                math.hypot(r.true_pose.x - o.center[0], r.true_pose.y - o.center[1])
                - o.radius
                for o in sc.obstacles
            )
            for r in recs
        )
    else:
        clearance = None
    track = sim.build_oval_track(
        sc.track.straight_len,
        sc.track.turn_radius,
        sc.track.half_width,
        math.radians(sc.track.bank_deg),
    )
    locator = sim.CenterlineLocator(track.centerline)
    max_lat = max(
        abs(locator.locate(r.true_pose.x, r.true_pose.y)[1]) for r in recs
    )
    return RunSummary(
        scenario=sc.name,
        completed=not result.off_track,
        off_track=result.off_track,
        time_in_emergency_s=round(emergency_s, 3),
        max_delta_m=round(max(deltas), 3) if deltas else None,
        min_obstacle_clearance_m=round(clearance, 3) if clearance is not None else None,
        max_lateral_offset_m=round(max_lat, 3),
        seed=sc.seed,
    )


def cmd_run(args) -> int:
    try:
        sc = sim.load_scenario(args.scenario)
        if args.seed is not None:
            sc = dataclasses.replace(sc, seed=args.seed)
        sim.validate_scenario(sc)
    except (OSError, sim.ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    result = sim.run_scenario(sc)
    with open(args.out, "w") as f:
        f.write(sim.trace_to_csv(result.records))
    print(f"trace written to {args.out}", file=sys.stderr)
    print(json.dumps(dataclasses.asdict(summarize(result))))
    return 2 if result.off_track else 0


def cmd_validate(args) -> int:
    try:
        sc = sim.load_scenario(args.scenario)
        sim.validate_scenario(sc)
    except (OSError, sim.ScenarioError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print("ok", file=sys.stderr)
    return 0


def cmd_acceptance(args) -> int:
    ok = acceptance.run_all(report=print)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="racenav",
        description="Fault-tolerant race-car navigation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario", help="path to scenario JSON")
    p_run.add_argument("--out", default="trace.csv", help="trace CSV path")
    p_run.add_argument("--seed", type=int, default=None, help="override seed")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("scenario", help="path to scenario JSON")
    p_val.set_defaults(func=cmd_validate)

    p_acc = sub.add_parser("acceptance", help="run the acceptance suite")
    p_acc.set_defaults(func=cmd_acceptance)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
