"""``chronowatt`` command-line interface.

Exit codes: 0 success, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .errors import ChronowattError, InputError, ProtocolError, ScenarioError
from .metrics import chassis_fill_curve, curve_csv, efficiency_curve, packet_size_curve, point, summary_json
from .policy import capacity_matched_schedule
from .power import load_device_model
from .scenario import parse_duration, scenario_from_dict
from .sla import load_policy, tolerance_matrix
from .traffic import (OnOffSourceParams, estimate_hurst, generate_aggregate, generate_poisson, load_trace,
                      utilization_series, write_trace)

log = logging.getLogger("chronowatt")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _read_doc(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ScenarioError("<file>", f"no such scenario file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _emit_set(text: str) -> set[str]:
    kinds = {k.strip() for k in text.split(",") if k.strip()}
    bad = kinds - {"csv", "json"}
    if bad:
        raise InputError(f"--emit accepts csv and json, got {sorted(bad)}")
    return kinds


# --- run ---------------------------------------------------------------------------------

def cmd_run(args) -> int:
    doc = _read_doc(args.scenario)
    scenario = scenario_from_dict(doc, args.seed)
    emit = _emit_set(args.emit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.log_events:
        with open(args.log_events, "w") as fh:
            result = scenario.run(event_log=fh)
    else:
        result = scenario.run()
    if "json" in emit:
        (out / "summary.json").write_text(summary_json(result) + "\n")
    if "csv" in emit:
        x = scenario.meta.get("load", 0.0)
        (out / "point.csv").write_text(curve_csv([point(result, x)]))
        with open(out / "energy.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["component", "state", "joules"])
            for name, states in sorted(result.energy_ledger.items()):
                for state, joules in sorted(states.items()):
                    w.writerow([name, state, f"{joules:.9f}"])
    print(f"average_power_w={result.average_power:.3f} delivered_gbps={result.delivered_gbps:.3f} "
          f"event_digest={result.event_digest}")
    return EXIT_OK


# --- sweep -------------------------------------------------------------------------------

def _sweep_doc(doc: dict, axis: str, value) -> dict:
    doc = copy.deepcopy(doc)
    traffic = doc.get("traffic", [])
    specs = [traffic] if isinstance(traffic, dict) else traffic
    cbr = [s for s in specs if s.get("kind") == "cbr"]
    if axis in ("load", "packet_size"):
        if len(cbr) != 1:
            raise ScenarioError("traffic", f"--axis {axis} needs exactly one cbr traffic spec")
        cbr[0][axis] = value
    else:
        doc["populated"] = int(value)
        policy = doc.setdefault("policy", {})
        if policy.get("mode") in ("idle_management", "combined"):
            chassis = load_device_model(doc.get("device", "t1600-like")).chassis
            plan = capacity_matched_schedule(chassis.fabric_planes, chassis.power_supplies, int(value),
                                             chassis.linecard_slots)
            policy["schedule"] = list(policy.get("schedule", [])) + [
                {"at_ns": a.at, "action": a.action, "target": a.target,
                 "expected_duration_class": a.expected_duration_class} for a in plan]
    return doc


def _run_doc(doc: dict, seed):
    return scenario_from_dict(doc, seed).run()


def _parse_values(axis: str, text: str) -> list:
    values = [v.strip() for v in text.split(",") if v.strip()]
    if not values:
        raise InputError("sweep needs at least one value")
    try:
        return [float(v) if axis == "load" else int(v) for v in values]
    except ValueError:
        raise InputError(f"bad value list for --axis {axis}: {text!r}") from None


def cmd_sweep(args) -> int:
    values = _parse_values(args.axis, args.values)
    doc = _read_doc(args.scenario)
    docs = [_sweep_doc(doc, args.axis, v) for v in values]
    for d in docs:  # validate everything before running anything
        scenario_from_dict(d, args.seed)
    if args.jobs > 1 and len(docs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_doc, docs, [args.seed] * len(docs)))
    else:
        results = [_run_doc(d, args.seed) for d in docs]
    if len(results) >= 2:
        curve = {"load": efficiency_curve, "packet_size": packet_size_curve,
                 "fill": chassis_fill_curve}[args.axis](results, values)
    else:
        curve = [point(results[0], values[0])]
    text = curve_csv(curve)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"sweep_{args.axis}.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# --- tables and traffic tools -----------------------------------------------------------------

def cmd_tolerance_matrix(args) -> int:
    policy = load_policy(args.policy) if args.policy else None
    matrix = tolerance_matrix(policy=policy)
    if args.format in ("text", "both"):
        sys.stdout.write(matrix.to_text().rstrip("\n") + "\n")
    if args.format in ("csv", "both"):
        if args.format == "both":
            sys.stdout.write("\n")
        sys.stdout.write(matrix.to_csv())
    return EXIT_OK


def cmd_gen_traffic(args) -> int:
    duration = parse_duration(_maybe_int(args.duration), "--duration")
    if args.poisson is not None:
        stream = generate_poisson(args.poisson, duration, args.seed, args.packet_size)
    else:
        params = OnOffSourceParams(shape_on=args.alpha, shape_off=args.alpha, min_on=args.min_on,
                                   min_off=args.min_off, peak_rate=args.peak_rate, packet_size=args.packet_size,
                                   app_class=args.app_class)
        stream = generate_aggregate([params], args.sources, duration, args.seed)
    write_trace(stream, args.out)
    print(f"wrote {len(stream)} packets to {args.out}")
    return EXIT_OK


def cmd_estimate_hurst(args) -> int:
    stream = load_trace(args.trace)
    if len(stream) == 0:
        raise InputError(f"trace {args.trace} holds no packets")
    bin_width = parse_duration(_maybe_int(args.bin_width), "--bin-width")
    series = utilization_series(stream, bin_width, args.capacity)
    est = estimate_hurst(series, args.min_agg, args.max_agg)
    print(f"hurst={est.hurst:.4f} slope={est.slope:.4f} bins={len(series.values)}")
    return EXIT_OK


def _maybe_int(text: str):
    try:
        return int(text)
    except ValueError:
        return text


# --- entry point ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chronowatt", description="Time-domain energy simulator for network devices.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default=".")
    r.add_argument("--emit", default="json")
    r.add_argument("--log-events", metavar="PATH")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over a list of values")
    s.add_argument("--scenario", required=True)
    s.add_argument("--axis", required=True, choices=("load", "packet_size", "fill"))
    s.add_argument("values", help="comma-separated values, e.g. 0,0.25,0.5,1.0")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("tolerance-matrix", help="print the wake-time tolerance matrix")
    t.add_argument("--format", choices=("text", "csv", "both"), default="both")
    t.add_argument("--policy", help="alternative policy JSON")
    t.set_defaults(func=cmd_tolerance_matrix)

    g = sub.add_parser("gen-traffic", help="write a synthetic trace")
    g.add_argument("--out", required=True)
    g.add_argument("--duration", default="PT10S", help="ns or ISO-8601 duration")
    g.add_argument("--sources", type=int, default=16)
    g.add_argument("--alpha", type=float, default=1.4)
    g.add_argument("--min-on", type=float, default=1e6)
    g.add_argument("--min-off", type=float, default=1e6)
    g.add_argument("--peak-rate", type=float, default=1e7)
    g.add_argument("--packet-size", type=int, default=1500)
    g.add_argument("--app-class", default="BestEffort")
    g.add_argument("--poisson", type=float, metavar="PPS", help="Poisson control at this packet rate")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_traffic)

    h = sub.add_parser("estimate-hurst", help="variance-time Hurst estimate of a trace")
    h.add_argument("trace")
    h.add_argument("--bin-width", default="1000000", help="ns or ISO-8601 duration")
    h.add_argument("--capacity", type=float, default=1e9, help="bits/s used to normalize utilization")
    h.add_argument("--min-agg", type=int, default=1)
    h.add_argument("--max-agg", type=int)
    h.set_defaults(func=cmd_estimate_hurst)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ChronowattError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
