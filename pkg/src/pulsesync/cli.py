"""Command-line harness tying the pipeline into runnable scenarios.

Subcommands::

    simulate   drive the laser + counter + DAQ against a live stream server
    serve      receive, demultiplex, average, persist; publish to the ring
    consume    poll the ring, compensate, extract spectra to CSV
    validate   replay a session under counter shifts and check alignment
    replay     re-send a recorded session to a stream endpoint

Exit codes: 0 success, 1 runtime or scientific-assertion failure,
2 usage/configuration error. Set PULSESYNC_LOG=DEBUG|INFO|... for logs.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import socket
import sys
import time
from dataclasses import replace
from pathlib import Path

from .client import run_consumer, shift_analysis, write_spectrum_csv
from .clock import VirtualClock, WallClock
from .config import ScenarioConfig, load_scenario
from .errors import ConfigError, PulseSyncError
from .protocol import CounterClient, CounterServer, TcpPacketSink
from .ring import SharedMemoryRing
from .server import StreamServer
from .session import FRAMES_NAME, read_manifest
from .simulate import run_daq
from .triggers import Layout, PulseCounter

logger = logging.getLogger(__name__)


def _setup_logging() -> None:
    level = os.environ.get("PULSESYNC_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _write_kv_csv(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for k, v in data.items():
            writer.writerow([k, v])


def _load(args) -> ScenarioConfig:
    scenario = load_scenario(args.config)
    if getattr(args, "seed", None) is not None:
        scenario = replace(scenario, seed=args.seed)
    if getattr(args, "out", None) is not None:
        scenario = replace(scenario, out_dir=Path(args.out))
    return scenario


def _ring_slot_size(scenario: ScenarioConfig) -> int:
    axial, lateral = scenario.phantom.frame_dims
    w = scenario.sequence.num_wavelengths
    return axial * lateral * w * 8 + (1 << 16)


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    scenario = _load(args)
    ep = scenario.endpoints
    stream_host, stream_port = ep.stream_host, ep.stream_port
    if args.connect:
        stream_host, stream_port = args.connect.rsplit(":", 1)[0], int(args.connect.rsplit(":", 1)[1])

    counter = PulseCounter()
    counter_server = CounterServer(counter, ep.counter_host, ep.counter_port).start()
    sink = TcpPacketSink(stream_host, stream_port)
    clock = WallClock() if args.realtime else VirtualClock()
    try:
        report = run_daq(
            scenario.laser,
            scenario.phantom,
            scenario.pathology,
            CounterClient(ep.counter_host, counter_server.port),
            sink,
            seed=scenario.seed,
            counter=counter,
            clock=clock,
            on_first_flashlamp=sink.connect,
        )
    finally:
        sink.close()
        counter_server.stop()
    out = scenario.out_dir
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "daq_report.csv")
    _write_kv_csv(out / "daq_summary.csv", report.summary())
    print(f"simulate: {report.summary()}")
    return 0


def cmd_serve(args) -> int:
    scenario = _load(args)
    ep = scenario.endpoints
    host, port = ep.stream_host, ep.stream_port
    if args.listen:
        host, port = args.listen.rsplit(":", 1)[0], int(args.listen.rsplit(":", 1)[1])
    ring = SharedMemoryRing.create(
        ep.ring_name, capacity=ep.ring_capacity, slot_size=_ring_slot_size(scenario)
    )
    session_dir = scenario.out_dir / "session"
    server = StreamServer(
        scenario.sequence,
        ring,
        host=host,
        port=port,
        session_dir=session_dir,
        config_hash=scenario.config_hash,
        geometry=scenario.geometry_dict(),
    )
    print(f"serve: listening on {server.host}:{server.port}, ring {ep.ring_name!r}")
    try:
        report = server.serve_session()
    finally:
        # let an attached consumer drain before tearing the segment down
        deadline = time.monotonic() + args.linger
        while time.monotonic() < deadline and ring.write_seq > ring.read_seq:
            time.sleep(0.05)
        ring.destroy()
    _write_kv_csv(scenario.out_dir / "server_report.csv", report.summary())
    print(f"serve: {report.summary()}")
    return 0


def cmd_consume(args) -> int:
    scenario = _load(args)
    ring = SharedMemoryRing.attach(scenario.endpoints.ring_name, timeout_s=args.attach_timeout)
    out = scenario.out_dir
    try:
        report = run_consumer(
            ring,
            scenario.energies,
            scenario.geometry,
            scenario.wavelengths_nm,
            out / "spectrum_live.csv",
        )
    finally:
        ring.detach()
    _write_kv_csv(out / "consumer_report.csv", report.summary())
    print(f"consume: {report.summary()}")
    return 0


def cmd_validate(args) -> int:
    scenario = _load(args)
    session_dir = Path(args.session) if args.session else scenario.out_dir / "session"
    shifts = [int(s) for s in args.shifts.split(",")] if args.shifts else [-2, -1, 0, 1, 2]
    if 0 not in shifts:
        raise ConfigError("shift 0 must be part of the analysis (alignment baseline)")
    reference = scenario.reference_ratios()
    results = shift_analysis(
        session_dir,
        shifts,
        geometry=scenario.geometry,
        reference=reference,
        energy_table=scenario.energies,
        restrict_common_domain=True,
        counter_offset=args.counter_offset,
    )
    out = scenario.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_spectrum_csv(out / "spectrum_shifts.csv", results)

    by_shift = {r.shift: r for r in results}
    rmse = {s: by_shift[s].rmse_vs_reference for s in shifts}
    argmin_shift = min((s for s in shifts if rmse[s] is not None), key=lambda s: rmse[s])
    argmin_ok = argmin_shift == 0

    w = scenario.sequence.num_wavelengths
    pairs = [
        (s1, s2)
        for i, s1 in enumerate(shifts)
        for s2 in shifts[i + 1 :]
        if s1 != s2 and (s1 - s2) % w == 0
    ]
    equiv_ok = True
    max_diff = 0.0
    if scenario.sequence.layout is Layout.CYCLIC:
        for s1, s2 in pairs:
            for r1, r2 in zip(by_shift[s1].ratio, by_shift[s2].ratio):
                if (r1 is None) != (r2 is None):
                    equiv_ok = False
                elif r1 is not None:
                    max_diff = max(max_diff, abs(r1 - r2))
        equiv_ok = equiv_ok and max_diff <= 1e-12

    verdict_lines = [f"shifts = {','.join(str(s) for s in shifts)}"]
    for s in shifts:
        v = rmse[s]
        verdict_lines.append(f"rmse[{s:+d}] = " + ("n/a" if v is None else f"{v:.12g}"))
    verdict_lines += [
        f"argmin_shift = {argmin_shift}",
        f"argmin_at_zero = {'pass' if argmin_ok else 'FAIL'}",
        f"equivalence_pairs = {pairs if pairs else 'none'}",
        f"equivalence_max_ratio_diff = {max_diff:.12g}",
        f"equivalence = {'pass' if equiv_ok else 'FAIL'}",
        f"verdict = {'pass' if (argmin_ok and equiv_ok) else 'FAIL'}",
    ]
    (out / "verdict.txt").write_text("\n".join(verdict_lines) + "\n")
    print("\n".join(verdict_lines))
    return 0 if (argmin_ok and equiv_ok) else 1


def cmd_replay(args) -> int:
    scenario = _load(args)
    session_dir = Path(args.session) if args.session else scenario.out_dir / "session"
    manifest = read_manifest(session_dir)
    host, port = scenario.endpoints.stream_host, scenario.endpoints.stream_port
    if args.connect:
        host, port = args.connect.rsplit(":", 1)[0], int(args.connect.rsplit(":", 1)[1])
    path = session_dir / FRAMES_NAME
    sent = 0
    sock = socket.create_connection((host, port), timeout=10.0)
    try:
        with open(path, "rb") as fh:
            while True:
                chunk = fh.read(1 << 16)
                if not chunk:
                    break
                sock.sendall(chunk)
                sent += len(chunk)
    finally:
        sock.close()
    print(f"replay: {sent} bytes, {manifest.packets} packets from {session_dir}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsesync",
        description="trigger-counted multi-wavelength acquisition pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario INI file")
        p.add_argument("--seed", type=int, default=None, help="override scenario seed")
        p.add_argument("--out", default=None, help="override output directory")

    p = sub.add_parser("simulate", help="run laser + counter + DAQ against a server")
    common(p)
    p.add_argument("--connect", default=None, metavar="HOST:PORT", help="stream endpoint")
    p.add_argument("--realtime", action="store_true", help="pace against the wall clock")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="receive, average, persist, publish one session")
    common(p)
    p.add_argument("--listen", default=None, metavar="HOST:PORT", help="listen endpoint")
    p.add_argument("--linger", type=float, default=10.0, help="seconds to let the consumer drain")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("consume", help="poll the ring and write spectrum CSV")
    common(p)
    p.add_argument("--attach-timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_consume)

    p = sub.add_parser("validate", help="shift analysis + alignment verdict on a session")
    common(p)
    p.add_argument("--session", default=None, help="session directory (default OUT/session)")
    p.add_argument("--shifts", default=None, help="comma-separated counter shifts")
    p.add_argument(
        "--counter-offset",
        type=int,
        default=None,
        help="first effective count (diagnostic; default from the session manifest)",
    )
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("replay", help="re-send a recorded session to a stream endpoint")
    common(p)
    p.add_argument("--session", default=None, help="session directory (default OUT/session)")
    p.add_argument("--connect", default=None, metavar="HOST:PORT")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except PulseSyncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
