"""Command-line front end: ``run``, ``sweep`` and ``scan-phase-matching``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from contextlib import contextmanager

import numpy as np

from . import spatial
from .ensemble import CLASSICAL_FIDELITY, EnsembleSpec, ObservableReport, observe
from .errors import InvalidParameterError, NumericalFailureError, UndefinedRatioError
from .protocols import Protocol, build_ham_variant, build_three_level_3pe, build_two_level_3pe

PROTOCOLS = ("two-level-3pe", "three-level-3pe", "ham-variant")
SWEEP_PARAMS = ("theta2", "theta3", "theta2_r", "theta3_r", "epsilon", "n_atoms", "separation")
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

_PI_TERM = re.compile(r"^\s*(?:([-+]?[\d.eE+-]+)\s*\*?\s*)?([-+]?)pi\s*(?:/\s*([\d.eE+-]+))?\s*$")


def parse_number(text: str) -> float:
    """A float, or a multiple of pi such as ``pi/2``, ``3*pi/4`` or ``-pi``."""
    try:
        return float(text)
    except ValueError:
        pass
    m = _PI_TERM.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    coef = float(m.group(1)) if m.group(1) else 1.0
    if m.group(2) == "-":
        coef = -coef
    denom = float(m.group(3)) if m.group(3) else 1.0
    return coef * math.pi / denom


def _parse_values(text: str) -> list[float]:
    try:
        return [parse_number(v.strip()) for v in text.split(",") if v.strip()]
    except argparse.ArgumentTypeError as exc:
        raise InvalidParameterError(str(exc)) from exc


def build_protocol(
    name: str,
    *,
    epsilon: float,
    separation: float = 20.0,
    storage_time: float = 100.0,
    theta2: float | None = None,
    theta3: float | None = None,
) -> Protocol:
    t1, t2 = 0.0, separation
    t3 = t2 + storage_time
    if name == "two-level-3pe":
        return build_two_level_3pe(
            t1, t2, t3, 2 * epsilon,
            math.pi / 2 if theta2 is None else theta2,
            math.pi / 2 if theta3 is None else theta3,
        )
    builder = {"three-level-3pe": build_three_level_3pe, "ham-variant": build_ham_variant}.get(name)
    if builder is None:
        raise InvalidParameterError(f"unknown protocol {name!r}")
    return builder(
        t1, t2, t3, epsilon,
        math.pi if theta2 is None else theta2,
        math.pi if theta3 is None else theta3,
    )


# -- rendering --------------------------------------------------------------


def report_record(report: ObservableReport) -> dict:
    record = report.to_dict()
    record["classical_fidelity"] = CLASSICAL_FIDELITY
    return record


def _flat(record: dict) -> dict:
    out = {}
    for key, value in record.items():
        if isinstance(value, list):
            out[f"{key}_re"], out[f"{key}_im"] = value
        else:
            out[key] = value
    return out


def _cell(value) -> str:
    return repr(float(value)) if isinstance(value, (float, int, np.floating)) else str(value)


def render_table(record: dict) -> str:
    width = max(len(k) for k in record)
    lines = []
    for key, value in record.items():
        shown = "[" + ", ".join(_cell(v) for v in value) + "]" if isinstance(value, list) else _cell(value)
        lines.append(f"{key:<{width}}  {shown}")
    return "\n".join(lines) + "\n"


def render_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0])
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(row[h]) for h in header])
    return buf.getvalue()


@contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


# -- commands ---------------------------------------------------------------


def _protocol_name(args) -> str:
    name = args.protocol_opt or args.protocol_pos or "two-level-3pe"
    if args.protocol_opt and args.protocol_pos and args.protocol_opt != args.protocol_pos:
        raise InvalidParameterError("conflicting protocol names")
    return name


def _config(args, overrides: dict | None = None) -> tuple[Protocol, EnsembleSpec]:
    cfg = {
        "n_atoms": args.n_atoms,
        "epsilon": args.epsilon,
        "separation": args.separation,
        "theta2": args.theta2,
        "theta3": args.theta3,
    }
    for key, value in (overrides or {}).items():
        cfg[key.replace("_r", "") if key.startswith("theta") else key] = value
    if args.single_photon and not (overrides and "epsilon" in overrides):
        cfg["epsilon"] = 1 / math.sqrt(cfg["n_atoms"])
    if cfg["separation"] <= 0:
        raise InvalidParameterError("separation must be positive")
    if getattr(args, "protocol_file", None):
        with open(args.protocol_file, encoding="utf-8") as fh:
            protocol = Protocol.from_json(fh.read())
        cfg["epsilon"] = protocol.epsilon
    else:
        protocol = build_protocol(
            _protocol_name(args),
            epsilon=cfg["epsilon"],
            separation=cfg["separation"],
            storage_time=args.storage_time,
            theta2=cfg["theta2"],
            theta3=cfg["theta3"],
        )
    spec = EnsembleSpec(
        n_atoms=cfg["n_atoms"],
        epsilon=cfg["epsilon"],
        quadrature_order=args.quadrature_order,
        method=args.method,
    )
    return protocol, spec


def cmd_run(args) -> int:
    protocol, spec = _config(args)
    if args.save_protocol:
        with open(args.save_protocol, "w", encoding="utf-8") as fh:
            fh.write(protocol.to_json(indent=2))
    record = report_record(observe(protocol, spec))
    with _output(args.out) as out:
        if args.format == "json":
            out.write(json.dumps(record) + "\n")
        elif args.format == "csv":
            out.write(render_csv([_flat(record)]))
        else:
            out.write(render_table(record))
    return 0


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise InvalidParameterError(f"unknown sweep parameter {args.param!r}")
    if args.values is not None:
        values = _parse_values(args.values)
    elif args.linspace is not None:
        start, stop, num = args.linspace
        values = list(np.linspace(parse_number(start), parse_number(stop), int(num)))
    else:
        raise InvalidParameterError("sweep needs --values or --linspace")
    if not values:
        raise InvalidParameterError("sweep needs at least one value")
    rows = []
    for value in values:
        protocol, spec = _config(args, {args.param: float(value)})
        row = {args.param: float(value)}
        row.update(_flat(report_record(observe(protocol, spec))))
        rows.append(row)
    with _output(args.out) as out:
        if args.format == "json":
            out.write(json.dumps(rows) + "\n")
        elif args.format == "table":
            out.write("\n".join(render_table(r) for r in rows))
        else:
            out.write(render_csv(rows))
    return 0


def cmd_scan(args) -> int:
    name = _protocol_name(args)
    if name != "two-level-3pe":
        raise InvalidParameterError("phase-matching scans are defined for the two-level protocol only")
    m = args.m
    epsilon = 1 / math.sqrt(m) if args.single_photon else args.epsilon
    protocol = build_protocol(
        name,
        epsilon=epsilon,
        separation=args.separation,
        storage_time=args.storage_time,
        theta2=args.theta2,
        theta3=args.theta3,
    )
    beams = spatial.BeamGeometry.boxcar(args.beam_angle)
    ens = spatial.sample_atoms(m, args.box, seed=args.seed)
    if args.directions:
        extra = spatial.read_directions(args.directions)
    else:
        extra = spatial.random_directions(args.n_random, seed=args.seed + 1)
    directions = np.vstack([beams.matched_direction, extra])
    rows = spatial.phase_matching_scan(protocol, ens, beams, directions)
    noise = spatial.fluorescence(protocol, ens, beams)
    if noise > 0:
        matched_snr = rows[0][1] / noise
        median_snr = float(np.median([i for _, i in rows[1:]])) / noise if len(rows) > 1 else math.nan
    else:
        matched_snr = median_snr = math.nan
    with _output(args.out) as out:
        if args.format == "json":
            payload = {
                "rows": [dict(zip(spatial.CSV_COLUMNS, (*map(float, d), i))) for d, i in rows],
                "matched_snr": matched_snr,
                "median_unmatched_snr": median_snr,
                "fluorescence": noise,
            }
            out.write(json.dumps(payload) + "\n")
        else:
            spatial.write_scan_csv(rows, out)
    print(f"# matched_snr={matched_snr!r} median_unmatched_snr={median_snr!r}", file=sys.stderr)
    return 0


# -- parser -----------------------------------------------------------------


def _common(p: argparse.ArgumentParser, formats=("table", "json", "csv"), default_format="table") -> None:
    p.add_argument("protocol_pos", nargs="?", choices=PROTOCOLS, metavar="PROTOCOL", help=f"one of {', '.join(PROTOCOLS)}")
    p.add_argument("--protocol", dest="protocol_opt", choices=PROTOCOLS)
    p.add_argument("--n-atoms", type=float, default=1e6)
    eps = p.add_mutually_exclusive_group()
    eps.add_argument("--epsilon", type=parse_number, default=1e-3, help="half-area of the stored pulse")
    eps.add_argument("--single-photon", action="store_true", help="set epsilon = 1/sqrt(N)")
    p.add_argument("--separation", type=parse_number, default=20.0, help="(t2 - t1) in units of 1/width")
    p.add_argument("--storage-time", type=parse_number, default=100.0, help="(t3 - t2) in units of 1/width")
    p.add_argument("--theta2", type=parse_number, default=None, help="second pulse area (Raman area for 3/4 levels)")
    p.add_argument("--theta3", type=parse_number, default=None, help="third pulse area (Raman area for 3/4 levels)")
    p.add_argument("--format", choices=formats, default=default_format)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--method", choices=("spectral", "quadrature"), default="spectral")
    p.add_argument("--quadrature-order", type=int, default=64)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photon-echo", description="Three-pulse photon echo storage simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one protocol and report its observables")
    _common(run)
    run.add_argument("--protocol-file", default=None, help="JSON protocol document to run instead of a named one")
    run.add_argument("--save-protocol", default=None, help="write the protocol as JSON")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="report observables over a parameter range")
    _common(sweep, default_format="csv")
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    values = sweep.add_mutually_exclusive_group(required=True)
    values.add_argument("--values", default=None, help="comma-separated values; pi multiples allowed")
    values.add_argument("--linspace", nargs=3, metavar=("START", "STOP", "NUM"), default=None)
    sweep.set_defaults(func=cmd_sweep, protocol_file=None)

    scan = sub.add_parser("scan-phase-matching", help="directional emission of a spatially extended ensemble")
    _common(scan, formats=("csv", "json"), default_format="csv")
    scan.add_argument("--m", type=int, default=10_000, help="number of sampled atoms")
    scan.add_argument("--box", type=float, default=100.0, help="cube side in wavelengths")
    scan.add_argument("--directions", default=None, help="CSV or JSON file of unit vectors")
    scan.add_argument("--n-random", type=int, default=20, help="random directions when no file is given")
    scan.add_argument("--beam-angle", type=float, default=0.2, help="boxcar half-angle in radians")
    scan.set_defaults(func=cmd_scan)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidParameterError, UndefinedRatioError, OSError) as exc:
        print(f"photon-echo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailureError as exc:
        print(f"photon-echo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
