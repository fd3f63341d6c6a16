"""Consuming side: energy compensation, blue/black ratio spectra, and the
desynchronization (shift) analysis.

The ratio of the blue-wire peak to the black-wire peak cancels per-pulse
energy fluctuation, since both targets sit in the same frame. The shift
analysis re-demultiplexes a persisted raw session under deliberate counter
shifts: with everything synchronized, shift 0 must match the expected
spectrum and every nonzero shift must degrade it.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError
from .server import WavelengthPackage
from .session import iter_session_packets, read_manifest
from .triggers import WavelengthSequence, assign_wavelength

logger = logging.getLogger(__name__)

FLAG_MISSING = "missing"
FLAG_ZERO_BLACK = "zero_black"

SPECTRUM_CSV_COLUMNS = [
    "shift",
    "packageIndex",
    "wavelength_nm",
    "ratio",
    "peakBlue",
    "peakBlack",
    "framesUsed",
    "flags",
]


@dataclass(frozen=True)
class EnergyTable:
    """Pre-measured per-wavelength pulse energies, relative units."""

    energies: tuple[float, ...]

    def __post_init__(self):
        if len(self.energies) < 1:
            raise ConfigError("energy table must not be empty")
        if any(e <= 0 for e in self.energies):
            raise ConfigError("energies must be positive")

    def __len__(self) -> int:
        return len(self.energies)

    @classmethod
    def uniform(cls, n: int) -> "EnergyTable":
        return cls(energies=(1.0,) * n)


@dataclass(frozen=True)
class SpectrumGeometry:
    """Where the two wire targets sit and how their peaks are measured."""

    blue: tuple[int, int]  # (axial, lateral)
    black: tuple[int, int]
    window_radius: int = 3
    peak_metric: str = "max_abs"  # or "mean_abs"

    def __post_init__(self):
        if self.window_radius < 0:
            raise ConfigError("window_radius must be >= 0")
        if self.peak_metric not in ("max_abs", "mean_abs"):
            raise ConfigError(f"unknown peak metric {self.peak_metric!r}")

    def window(self, center: tuple[int, int], dims: tuple[int, int]) -> tuple[int, int, int, int]:
        a, l = center
        r = self.window_radius
        a0, a1 = a - r, a + r + 1
        l0, l1 = l - r, l + r + 1
        if a0 < 0 or l0 < 0 or a1 > dims[0] or l1 > dims[1]:
            raise ConfigError(f"target window at {center} exceeds frame dims {dims}")
        return a0, a1, l0, l1

    def validate_for(self, dims: tuple[int, int]) -> None:
        wa = self.window(self.blue, dims)
        wb = self.window(self.black, dims)
        if not (wa[1] <= wb[0] or wb[1] <= wa[0] or wa[3] <= wb[2] or wb[3] <= wa[2]):
            raise ConfigError("blue and black windows overlap")


@dataclass(frozen=True)
class SpectrumResult:
    """Per-wavelength blue/black ratios under one counter shift.

    ``package_index`` is -1 when the spectrum was pooled over a whole
    session instead of one package. Wavelengths with no surviving frames
    carry None entries and a "missing" flag.
    """

    shift: int
    package_index: int
    wavelengths_nm: tuple[float, ...]
    ratio: tuple[float | None, ...]
    peak_blue: tuple[float | None, ...]
    peak_black: tuple[float | None, ...]
    frames_used: tuple[int, ...]
    flags: tuple[str, ...]
    rmse_vs_reference: float | None = None

    def csv_rows(self) -> list[list]:
        rows = []
        for i, wl in enumerate(self.wavelengths_nm):
            rows.append(
                [
                    self.shift,
                    self.package_index,
                    wl,
                    "" if self.ratio[i] is None else f"{self.ratio[i]:.12g}",
                    "" if self.peak_blue[i] is None else f"{self.peak_blue[i]:.12g}",
                    "" if self.peak_black[i] is None else f"{self.peak_black[i]:.12g}",
                    self.frames_used[i],
                    self.flags[i],
                ]
            )
        return rows


def compensate(package: WavelengthPackage, table: EnergyTable) -> WavelengthPackage:
    """Divide each wavelength slice by its pre-measured pulse energy."""
    w = package.tensor.shape[2]
    if len(table) != w:
        raise ConfigError(f"energy table has {len(table)} entries, package has {w} wavelengths")
    tensor = package.tensor / np.asarray(table.energies, dtype=np.float64)
    return replace(package, tensor=tensor)


def _peaks(tensor: np.ndarray, geometry: SpectrumGeometry, wavelength_index: int):
    metric = (
        kernels.window_peak_abs if geometry.peak_metric == "max_abs" else kernels.window_mean_abs
    )
    dims = tensor.shape[:2]
    plane = np.ascontiguousarray(tensor[:, :, wavelength_index])
    pb = metric(plane, *geometry.window(geometry.blue, dims))
    pk = metric(plane, *geometry.window(geometry.black, dims))
    return float(pb), float(pk)


def _spectrum_from_tensor(
    tensor: np.ndarray,
    frames_used,
    wavelengths_nm,
    geometry: SpectrumGeometry,
    *,
    shift: int,
    package_index: int,
) -> SpectrumResult:
    geometry.validate_for(tensor.shape[:2])
    ratios: list[float | None] = []
    blues: list[float | None] = []
    blacks: list[float | None] = []
    flags: list[str] = []
    for i in range(len(wavelengths_nm)):
        if frames_used[i] == 0:
            ratios.append(None)
            blues.append(None)
            blacks.append(None)
            flags.append(FLAG_MISSING)
            continue
        pb, pk = _peaks(tensor, geometry, i)
        blues.append(pb)
        blacks.append(pk)
        if pk == 0.0:
            ratios.append(None)
            flags.append(FLAG_ZERO_BLACK)
        else:
            ratios.append(pb / pk)
            flags.append("")
    return SpectrumResult(
        shift=shift,
        package_index=package_index,
        wavelengths_nm=tuple(wavelengths_nm),
        ratio=tuple(ratios),
        peak_blue=tuple(blues),
        peak_black=tuple(blacks),
        frames_used=tuple(frames_used),
        flags=tuple(flags),
    )


def extract_spectrum(
    package: WavelengthPackage,
    geometry: SpectrumGeometry,
    wavelengths_nm,
    *,
    shift: int = 0,
) -> SpectrumResult:
    return _spectrum_from_tensor(
        package.tensor,
        package.frames_used,
        wavelengths_nm,
        geometry,
        shift=shift,
        package_index=package.package_index,
    )


def rmse_against(result: SpectrumResult, reference) -> SpectrumResult:
    """Attach the root-mean-square error of the ratio vector vs a reference,
    computed over the wavelengths present in both."""
    diffs = [
        (r - ref) ** 2
        for r, ref in zip(result.ratio, reference)
        if r is not None and ref is not None
    ]
    rmse = math.sqrt(sum(diffs) / len(diffs)) if diffs else None
    return replace(result, rmse_vs_reference=rmse)


# ---------------------------------------------------------------------------
# shift analysis over a persisted session

def shift_analysis(
    session_dir,
    shifts,
    *,
    geometry: SpectrumGeometry,
    reference=None,
    energy_table: EnergyTable | None = None,
    restrict_common_domain: bool = False,
    counter_offset: int | None = None,
) -> list[SpectrumResult]:
    """Re-demultiplex a raw session under each counter shift and pool the
    per-wavelength means over the whole session.

    With ``restrict_common_domain`` every shift uses only the counters valid
    under all requested shifts, so structurally equivalent shifts (s and
    s+W on a cyclic layout) produce bit-identical ratio vectors.
    ``counter_offset`` overrides the manifest's first-effective-count
    convention, which deliberately misaligns the demultiplexer (diagnostic).
    """
    shifts = list(shifts)
    if not shifts:
        raise ConfigError("no shifts requested")
    manifest = read_manifest(session_dir)
    seq = manifest.sequence()
    offset = manifest.counter_offset if counter_offset is None else counter_offset
    w = seq.num_wavelengths

    min_valid_counter = offset
    if restrict_common_domain:
        min_valid_counter = max(min_valid_counter, max(offset - s for s in shifts))

    sums: dict[int, list[np.ndarray]] = {s: [] for s in shifts}
    counts = {s: [0] * w for s in shifts}
    excluded = {s: 0 for s in shifts}
    n_packets = 0
    dims: tuple[int, int] | None = None
    for packet in iter_session_packets(session_dir):
        n_packets += 1
        if dims is None:
            dims = (packet.axial, packet.lateral)
            for s in shifts:
                sums[s] = [np.zeros(dims, dtype=np.float64) for _ in range(w)]
        for s in shifts:
            if packet.counter < min_valid_counter or packet.counter - offset + s < 0:
                excluded[s] += 1
                continue
            slot = assign_wavelength(seq, packet.counter, s, counter_offset=offset)
            kernels.accumulate(sums[s][slot.wavelength_index], packet.samples)
            counts[s][slot.wavelength_index] += 1
    if n_packets == 0:
        raise ConfigError(f"session at {session_dir} holds no frames")

    energies = (
        np.asarray(energy_table.energies, dtype=np.float64)
        if energy_table is not None
        else np.ones(w)
    )
    if len(energies) != w:
        raise ConfigError("energy table length does not match sequence")

    results = []
    for s in shifts:
        tensor = np.zeros((*dims, w), dtype=np.float64)
        for wi in range(w):
            if counts[s][wi] > 0:
                tensor[:, :, wi] = sums[s][wi] / counts[s][wi] / energies[wi]
        result = _spectrum_from_tensor(
            tensor,
            counts[s],
            manifest.wavelengths_nm,
            geometry,
            shift=s,
            package_index=-1,
        )
        if reference is not None:
            result = rmse_against(result, reference)
        logger.info(
            "shift %+d: %d frames excluded, rmse %s",
            s,
            excluded[s],
            "n/a" if result.rmse_vs_reference is None else f"{result.rmse_vs_reference:.6f}",
        )
        results.append(result)
    return results


def write_spectrum_csv(path, results) -> int:
    """One row per (result, wavelength); returns the number of rows."""
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SPECTRUM_CSV_COLUMNS)
        for result in results:
            for row in result.csv_rows():
                writer.writerow(row)
                rows += 1
    return rows


# ---------------------------------------------------------------------------
# live consumer loop

@dataclass
class ConsumerReport:
    packages: int = 0
    rows: int = 0
    gaps: int = 0
    stop_reason: str = ""

    def summary(self) -> dict:
        return {
            "packages": self.packages,
            "rows": self.rows,
            "gaps": self.gaps,
            "stop_reason": self.stop_reason,
        }


def run_consumer(
    ring,
    table: EnergyTable,
    geometry: SpectrumGeometry,
    wavelengths_nm,
    out_csv_path,
    *,
    poll_interval_s: float = 0.001,
    stop_event=None,
) -> ConsumerReport:
    """Poll the ring, compensate, extract, append spectrum rows in sequence
    order until the producer closes the ring (or stop_event fires)."""
    report = ConsumerReport()
    last_seen = 0
    out_path = Path(out_csv_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SPECTRUM_CSV_COLUMNS)
        while True:
            got = ring.poll(last_seen)
            if got is None:
                if ring.closed:
                    report.stop_reason = "end of stream"
                    break
                if stop_event is not None and stop_event.is_set():
                    report.stop_reason = "stopped"
                    break
                time.sleep(poll_interval_s)
                continue
            last_seen = got.seq
            report.gaps += got.gap
            package = compensate(got.package, table)
            result = extract_spectrum(package, geometry, wavelengths_nm)
            for row in result.csv_rows():
                writer.writerow(row)
                report.rows += 1
            fh.flush()
            report.packages += 1
    logger.info("consumer done: %s", report.summary())
    return report
