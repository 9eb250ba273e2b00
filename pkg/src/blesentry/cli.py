"""Command-line interface: simulate, analyze, profile, detect, evaluate, catalog.

Exit codes: 0 = success / benign, 2 = attack detected, 1 = error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from . import catalog as catalog_mod
from .analyzer import ingest, suspicious_devices, write_samples_csv
from .detector import Aggregation, Decision, DetectorConfig, format_verdict, probe_and_decide
from .evaluate import (
    DEFAULT_SEED,
    RunConfig,
    derive_seed,
    render_report,
    run_evaluation,
    write_report_csv,
)
from .model import BleError, read_trace, write_trace
from .profiler import (
    DEFAULT_CLUSTER_GAP,
    DEFAULT_MIN_SAMPLES,
    InsufficientSamples,
    ModesOverlap,
    ProfileNotFound,
    ProfileStore,
    StoreCorrupt,
    build_profile,
)
from .simulator import SessionPlan, simulate_session

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ATTACK = 2


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="run seed (default %(default)s)")
    parser.add_argument(
        "--t-mitm",
        type=float,
        default=0.0022,
        dest="t_mitm",
        help="minimum relay-added delay in seconds (default %(default)s)",
    )
    parser.add_argument(
        "--gap",
        type=float,
        default=DEFAULT_CLUSTER_GAP,
        help="clustering gap in seconds (default %(default)s)",
    )
    parser.add_argument("--store", default="profiles", help="profile store directory (default %(default)s)")
    parser.add_argument(
        "--aggregation",
        choices=[a.value for a in Aggregation],
        default=Aggregation.SINGLE.value,
        help="per-connection decision rule (default %(default)s)",
    )
    parser.add_argument("--k", type=int, default=10, help="max probes per decision (default %(default)s)")
    parser.add_argument("--catalog", help="catalog file overriding the built-in devices/attackers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blesentry",
        description="Timing-based man-in-the-middle detection for BLE traffic, desk-scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a trace for a catalog device")
    _common_flags(p)
    p.add_argument("--device", required=True, help="device name from the catalog, or 'all'")
    p.add_argument("--attacker", help="relay tool name; omit for a benign trace")
    p.add_argument("--reads", type=int, default=10)
    p.add_argument("--writes", type=int, default=10)
    p.add_argument("--connections", type=int, default=1, help="sessions per device (default %(default)s)")
    p.add_argument("--inter-op-gap", type=float, default=0.1, dest="inter_op_gap")
    p.add_argument("--out", required=True, help="trace file to write")

    p = sub.add_parser("analyze", help="extract response-time samples from a trace")
    _common_flags(p)
    p.add_argument("trace")
    p.add_argument("--csv", help="write samples as CSV here instead of stdout")

    p = sub.add_parser("profile", help="build device profiles from a benign trace")
    _common_flags(p)
    p.add_argument("trace")
    p.add_argument(
        "--min-samples",
        type=int,
        default=DEFAULT_MIN_SAMPLES,
        dest="min_samples",
        help="samples required per operation (default %(default)s)",
    )

    p = sub.add_parser("detect", help="judge the connections in a trace against stored profiles")
    _common_flags(p)
    p.add_argument("trace")

    p = sub.add_parser("evaluate", help="run the full FP/FN experiment over the catalog")
    _common_flags(p)
    p.add_argument("--csv", help="also write the report as CSV here")
    p.add_argument("--figures", help="also render figures into this directory")
    p.add_argument("--save-profiles", action="store_true", help="persist the profiles into --store")

    p = sub.add_parser("catalog", help="print the built-in devices and attackers")
    _common_flags(p)
    p.add_argument("--export", help="write the catalog in config-file form here")

    return parser


def _load_catalog(args):
    if args.catalog:
        return catalog_mod.load_catalog(args.catalog)
    return catalog_mod.builtin_catalog()


def _cmd_simulate(args) -> int:
    devices, attackers = _load_catalog(args)
    if args.device.lower() == "all":
        selected = devices
    else:
        device = catalog_mod.find_device(devices, args.device)
        if device is None:
            print(f"error: unknown device {args.device!r}", file=sys.stderr)
            return EXIT_ERROR
        selected = [device]
    attacker = None
    if args.attacker:
        attacker = catalog_mod.find_attacker(attackers, args.attacker)
        if attacker is None:
            print(f"error: unknown attacker {args.attacker!r}", file=sys.stderr)
            return EXIT_ERROR

    packets = []
    start = 0.0
    conn_id = 1
    for device in selected:
        for index in range(args.connections):
            plan = SessionPlan(
                device=device,
                n_reads=args.reads,
                n_writes=args.writes,
                inter_op_gap=args.inter_op_gap,
                attacker=attacker,
                seed=derive_seed(args.seed, device.id.identifier, "simulate", index),
            )
            session = simulate_session(plan, start_time=start, conn_id=conn_id)
            packets.extend(session)
            start = session[-1].timestamp + 1.0
            conn_id += 1
    header = "blesentry trace seed=%d device=%s attacker=%s" % (
        args.seed,
        args.device,
        args.attacker or "none",
    )
    count = write_trace(args.out, packets, header=header)
    print(f"{count} packets -> {args.out}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    result = ingest(read_trace(args.trace))
    for warning in result.warnings:
        print(f"warning: {warning.kind.value} at {warning.timestamp:.6f}: {warning.detail}", file=sys.stderr)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            write_samples_csv(result.samples, fh)
        print(f"{len(result.samples)} samples -> {args.csv}")
    else:
        write_samples_csv(result.samples, sys.stdout)
    suspicious = suspicious_devices(result.ledger)
    print(f"suspicious devices: {', '.join(d.identifier for d in suspicious) or 'none'}", file=sys.stderr)
    return EXIT_OK


def _cmd_profile(args) -> int:
    result = ingest(read_trace(args.trace))
    store = ProfileStore(args.store)
    by_device = {}
    for sample in result.samples:
        by_device.setdefault(sample.device, []).append(sample)
    profiled = 0
    for device in sorted(by_device, key=lambda d: d.identifier):
        try:
            profile = build_profile(device, by_device[device], gap=args.gap, min_samples=args.min_samples)
        except (InsufficientSamples, ModesOverlap) as exc:
            print(f"{device.identifier}: not profiled ({exc})", file=sys.stderr)
            continue
        store.save(profile)
        summary = []
        for label, modes, count in (
            ("read", profile.read_modes, profile.read_samples),
            ("write", profile.write_modes, profile.write_samples),
        ):
            if modes:
                means = "/".join("%.6f" % m.mean for m in modes)
                summary.append(f"{label} {len(modes)} mode(s) @ {means} ({count} samples)")
        print(f"{device.identifier}: {'; '.join(summary)}")
        profiled += 1
    if profiled == 0:
        print("error: no devices profiled", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def _cmd_detect(args) -> int:
    result = ingest(read_trace(args.trace))
    for warning in result.warnings:
        print(f"warning: {warning.kind.value} at {warning.timestamp:.6f}: {warning.detail}", file=sys.stderr)
    store = ProfileStore(args.store)
    cfg = DetectorConfig(
        t_mitm=args.t_mitm, k_max=args.k, aggregation=Aggregation(args.aggregation), gap=args.gap
    )
    suspicious = set(suspicious_devices(result.ledger))

    by_conn: dict[int, list] = {}
    for sample in result.samples:
        by_conn.setdefault(sample.conn_id, []).append(sample)

    attack_seen = False
    verdicts = 0
    failures = 0
    for conn_id in sorted(by_conn):
        samples = by_conn[conn_id]
        device = samples[0].device
        if device not in suspicious:
            continue
        try:
            profile = store.load(device)
        except (ProfileNotFound, StoreCorrupt) as exc:
            print(f"{device.identifier} conn={conn_id}: no usable profile ({exc})", file=sys.stderr)
            failures += 1
            continue
        verdict = probe_and_decide(profile, samples, cfg)
        print(format_verdict(verdict, conn_id=conn_id))
        verdicts += 1
        if verdict.final is Decision.ATTACK:
            attack_seen = True
    if attack_seen:
        return EXIT_ATTACK
    if verdicts == 0 and failures > 0:
        return EXIT_ERROR
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    devices, attackers = _load_catalog(args)
    cfg = RunConfig(
        seed=args.seed,
        t_mitm=args.t_mitm,
        gap=args.gap,
        aggregation=Aggregation(args.aggregation),
        k_max=args.k,
    )
    report = run_evaluation(devices, attackers, cfg)
    sys.stdout.write(render_report(report))
    if args.save_profiles:
        store = ProfileStore(args.store)
        for outcome in report.devices:
            store.save(outcome.profile)
        print(f"profiles -> {args.store}", file=sys.stderr)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            write_report_csv(report, fh)
        print(f"csv -> {args.csv}", file=sys.stderr)
    if args.figures:
        from .figures import render_report_figures

        for path in render_report_figures(report, args.figures):
            print(f"figure -> {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_catalog(args) -> int:
    devices, attackers = _load_catalog(args)
    print("devices:")
    for device in devices:
        parts = []
        for label, handle, modes in (
            ("read", device.read_handle, device.read_modes),
            ("write", device.write_handle, device.write_modes),
        ):
            if modes:
                means = "/".join("%.1f" % (m.mean * 1000.0) for m in modes)
                parts.append(f"{label} 0x{handle:04x}: {len(modes)} mode(s) @ {means} ms")
        print(f"  {device.id.identifier:<28} {'; '.join(parts)}")
    print("attackers:")
    for attacker in attackers:
        print(
            "  %-12s t1 %.1f-%.1f ms, t2 %.1f-%.1f ms"
            % (
                attacker.tool_name,
                attacker.t1_min * 1000.0,
                attacker.t1_max * 1000.0,
                attacker.t2_min * 1000.0,
                attacker.t2_max * 1000.0,
            )
        )
    if args.export:
        catalog_mod.save_catalog(args.export, devices, attackers)
        print(f"catalog -> {args.export}", file=sys.stderr)
    return EXIT_OK


_HANDLERS = {
    "simulate": _cmd_simulate,
    "analyze": _cmd_analyze,
    "profile": _cmd_profile,
    "detect": _cmd_detect,
    "evaluate": _cmd_evaluate,
    "catalog": _cmd_catalog,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except BleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
