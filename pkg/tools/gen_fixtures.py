"""Generate the wire-format conformance fixtures consumed by frontend/tests.

Deterministic: running it twice produces byte-identical fixtures. Outputs
land in frontend/fixtures/ and are committed, so the TypeScript client's
test suite runs without this package installed.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from pulsesync.client import EnergyTable, SpectrumGeometry, extract_spectrum, write_spectrum_csv
from pulsesync.protocol import HEADER_SIZE, decode_all, encode_packet
from pulsesync.server import PackageAccumulator
from pulsesync.session import SessionWriter
from pulsesync.triggers import Layout, WavelengthSequence

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "frontend" / "fixtures"

SEQ = WavelengthSequence((700.0, 740.0, 760.0, 780.0), Layout.CYCLIC, 5)
DIMS = (16, 8)
GEOMETRY = {"blue": [4, 2], "black": [11, 5], "window_radius": 1, "peak_metric": "max_abs"}


def packet_fields(packet, data):
    return {
        "counter": packet.counter,
        "timestampNs": packet.timestamp_ns,
        "flags": packet.flags,
        "axial": packet.axial,
        "lateral": packet.lateral,
        "dtypeCode": packet.dtype_code,
        "payloadCrc32": zlib.crc32(data[HEADER_SIZE:]),
        "byteLength": len(data),
    }


def golden_single():
    data = encode_packet(2, np.array([[7]], dtype=np.int16))
    (packet,) = decode_all(data)
    (FIXTURES / "golden_single.bin").write_bytes(data)
    (FIXTURES / "golden_single.json").write_text(
        json.dumps(packet_fields(packet, data), indent=2) + "\n"
    )


def golden_multi():
    rng = np.random.default_rng(1001)
    blobs, fields = [], []
    for i in range(6):
        axial, lateral = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        if i % 2 == 0:
            samples = rng.integers(-32768, 32768, (axial, lateral)).astype(np.int16)
        else:
            samples = rng.normal(0, 10, (axial, lateral)).astype(np.float32)
        data = encode_packet(
            2 + i,
            samples,
            timestamp_ns=int(rng.integers(0, 2**52)),
            flags=int(rng.integers(0, 2)),
        )
        (packet,) = decode_all(data)
        blobs.append(data)
        fields.append(packet_fields(packet, data))
    stream = b"".join(blobs)
    (FIXTURES / "golden_multi.bin").write_bytes(stream)
    (FIXTURES / "golden_multi.json").write_text(json.dumps(fields, indent=2) + "\n")


def reject_fixtures():
    rng = np.random.default_rng(2002)
    samples = rng.integers(-100, 100, (3, 2)).astype(np.int16)
    good = encode_packet(5, samples, timestamp_ns=42)

    bad_crc = bytearray(good)
    bad_crc[9] ^= 0xFF  # counter byte: CRC must catch it
    (FIXTURES / "reject_bad_crc.bin").write_bytes(bytes(bad_crc))

    # wrong version but internally consistent CRC
    head = bytearray(good[: HEADER_SIZE - 4])
    struct.pack_into("<H", head, 4, 9)
    bad_version = bytes(head) + struct.pack("<I", zlib.crc32(bytes(head))) + good[HEADER_SIZE:]
    (FIXTURES / "reject_bad_version.bin").write_bytes(bad_version)

    # payload length inconsistent with dims, CRC recomputed to match
    head = bytearray(good[: HEADER_SIZE - 4])
    struct.pack_into("<Q", head, 36, 9999)
    bad_len = bytes(head) + struct.pack("<I", zlib.crc32(bytes(head))) + good[HEADER_SIZE:]
    (FIXTURES / "reject_payload_mismatch.bin").write_bytes(bad_len)

    (FIXTURES / "reject_truncated.bin").write_bytes(good[:-5])

    expectations = {}
    for name in ("reject_bad_crc", "reject_bad_version", "reject_payload_mismatch", "reject_truncated"):
        results = decode_all((FIXTURES / f"{name}.bin").read_bytes())
        packets = [r for r in results if not hasattr(r, "reason")]
        errors = [r for r in results if hasattr(r, "reason")]
        assert packets == [], name
        expectations[name] = {
            "packets": 0,
            "firstErrorOffset": errors[0].offset,
        }
    (FIXTURES / "reject_expected.json").write_text(json.dumps(expectations, indent=2) + "\n")


def conformance_session():
    rng = np.random.default_rng(3003)
    session_dir = FIXTURES / "session"
    writer = SessionWriter(session_dir, SEQ, geometry=GEOMETRY, config_hash="fixture")
    acc = PackageAccumulator(SEQ)
    packages = []
    packet_fields_list = []

    counter = 2
    emitted = 0
    while emitted < 100:
        if rng.uniform() < 0.12:  # dropped frame: counter advances, no packet
            counter += 1
            continue
        samples = rng.integers(-2000, 2000, DIMS).astype(np.int16)
        data = encode_packet(counter, samples, timestamp_ns=counter * 50_000_000)
        (packet,) = decode_all(data)
        writer.append(data, packet)
        result = acc.accept(packet)
        assert result.reject is None
        packages.extend(result.completed)
        packet_fields_list.append(packet_fields(packet, data))
        counter += 1
        emitted += 1
    packages.extend(acc.finish())
    writer.close()

    package_blobs = []
    spectra = []
    geometry = SpectrumGeometry(blue=(4, 2), black=(11, 5), window_radius=1)
    for pkg in packages:
        means = {
            str(w): [float(v) for v in pkg.tensor[:, :, w].ravel(order="C")]
            for w in range(SEQ.num_wavelengths)
        }
        package_blobs.append(
            {
                "packageIndex": pkg.package_index,
                "framesUsed": list(pkg.frames_used),
                "framesExpected": pkg.frames_expected,
                "missingCount": len(pkg.missing_frames),
                "incompleteWavelengths": list(pkg.incomplete_wavelengths),
                "counterMin": pkg.counter_min,
                "counterMax": pkg.counter_max,
                "means": means,
            }
        )
        spectra.append(extract_spectrum(pkg, geometry, SEQ.wavelengths_nm))
    write_spectrum_csv(FIXTURES / "spectrum_primary.csv", spectra)
    (FIXTURES / "session_expected.json").write_text(
        json.dumps({"packets": packet_fields_list, "packages": package_blobs}, indent=2) + "\n"
    )


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    golden_single()
    golden_multi()
    reject_fixtures()
    conformance_session()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
