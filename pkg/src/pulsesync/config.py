"""Scenario configuration: one INI file describes a whole run.

Sections: [laser] [sequence] [phantom] [pathology] [energies] [analysis]
[endpoints] [run]. Lists are comma-separated; durations are given in
microseconds in the file and held as nanoseconds internally. Every run
reads exactly one scenario file, so a scenario plus a seed pins the whole
experiment.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .client import EnergyTable, SpectrumGeometry
from .errors import ConfigError
from .simulate import DaqPathology, LaserConfig, PhantomModel, PhantomTarget
from .triggers import Layout, WavelengthSequence

US = 1_000  # ns per microsecond


@dataclass(frozen=True)
class Endpoints:
    stream_host: str = "127.0.0.1"
    stream_port: int = 47310
    counter_host: str = "127.0.0.1"
    counter_port: int = 47311
    ring_name: str = "pulsesync-ring"
    ring_capacity: int = 8


@dataclass(frozen=True)
class ScenarioConfig:
    laser: LaserConfig
    phantom: PhantomModel
    pathology: DaqPathology
    energies: EnergyTable
    geometry: SpectrumGeometry
    endpoints: Endpoints
    seed: int
    out_dir: Path
    config_hash: str

    @property
    def sequence(self) -> WavelengthSequence:
        return self.laser.sequence

    @property
    def wavelengths_nm(self) -> tuple[float, ...]:
        return self.sequence.wavelengths_nm

    def reference_ratios(self) -> tuple[float, ...]:
        """The configured blue/black spectra quotient: what a perfectly
        synchronized, noise-free run must measure."""
        blue = self.phantom.target("blue").spectrum
        black = self.phantom.target("black").spectrum
        return tuple(b / k for b, k in zip(blue, black))

    def geometry_dict(self) -> dict:
        return {
            "blue": list(self.geometry.blue),
            "black": list(self.geometry.black),
            "window_radius": self.geometry.window_radius,
            "peak_metric": self.geometry.peak_metric,
        }


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x.strip()) for x in raw.split(",") if x.strip())


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(x.strip()) for x in raw.split(",") if x.strip())


def _host_port(raw: str) -> tuple[str, int]:
    host, _, port = raw.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"expected HOST:PORT, got {raw!r}")
    return host, int(port)


def _bursts(raw: str) -> tuple[tuple[int, int], ...]:
    # "5:3, 50:2" -> drop counts 5,6,7 and 50,51
    out = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        start, _, length = part.partition(":")
        out.append((int(start), int(length)))
    return tuple(out)


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file {path} does not exist")
    raw_bytes = path.read_bytes()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(raw_bytes.decode("utf-8"))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    try:
        seq_s = parser["sequence"] if parser.has_section("sequence") else {}
        sequence = WavelengthSequence(
            wavelengths_nm=_floats(seq_s.get("wavelengths_nm", "700, 740, 760, 780")),
            layout=Layout(seq_s.get("layout", "cyclic").strip().lower()),
            frames_per_wavelength=int(seq_s.get("frames_per_wavelength", 50)),
        )

        laser_s = parser["laser"] if parser.has_section("laser") else {}
        total_default = 1 + sequence.frames_per_package  # dummy + one full package
        laser = LaserConfig(
            sequence=sequence,
            total_effective_pulses=int(laser_s.get("total_effective_pulses", total_default)),
            rep_rate_hz=float(laser_s.get("rep_rate_hz", 20.0)),
            prep_flashlamp_pulses=int(laser_s.get("prep_flashlamp_pulses", 5)),
            qswitch_delay_ns=round(float(laser_s.get("qswitch_delay_us", 200.0)) * US),
            energy_jitter=float(laser_s.get("energy_jitter", 0.05)),
        )

        ph_s = parser["phantom"] if parser.has_section("phantom") else {}
        dims = (int(ph_s.get("axial_samples", 512)), int(ph_s.get("lateral_channels", 128)))
        w = sequence.num_wavelengths
        blue_spec = _floats(ph_s.get("blue_spectrum", "1.00, 0.80, 0.62, 0.50"))
        black_spec = _floats(ph_s.get("black_spectrum", ", ".join(["1.0"] * w)))
        blue_pos = _ints(ph_s.get("blue_position", "160, 40"))
        black_pos = _ints(ph_s.get("black_position", "352, 88"))
        if len(blue_spec) != w or len(black_spec) != w:
            raise ConfigError(f"target spectra must have {w} entries")
        phantom = PhantomModel(
            targets=(
                PhantomTarget("blue", blue_pos[0], blue_pos[1], blue_spec),
                PhantomTarget("black", black_pos[0], black_pos[1], black_spec),
            ),
            frame_dims=dims,
            noise_sigma=float(ph_s.get("noise_sigma", 0.0)),
            point_spread=(
                float(ph_s.get("point_spread_axial", 1.5)),
                float(ph_s.get("point_spread_lateral", 1.5)),
            ),
            base_amplitude=float(ph_s.get("base_amplitude", 8000.0)),
        )

        pa_s = parser["pathology"] if parser.has_section("pathology") else {}
        pathology = DaqPathology(
            frame_drop_probability=float(pa_s.get("frame_drop_probability", 0.0)),
            start_delay_mean_ns=round(float(pa_s.get("start_delay_mean_us", 100.0)) * US),
            start_delay_jitter_ns=round(float(pa_s.get("start_delay_jitter_us", 50.0)) * US),
            busy_bursts=_bursts(pa_s.get("busy_bursts", "")),
            axial_shift_per_ns=float(pa_s.get("axial_shift_per_ns", 0.0)),
        )

        en_s = parser["energies"] if parser.has_section("energies") else {}
        energies = EnergyTable(_floats(en_s.get("table", ", ".join(["1.0"] * w))))
        if len(energies) != w:
            raise ConfigError(f"energy table must have {w} entries")

        an_s = parser["analysis"] if parser.has_section("analysis") else {}
        geometry = SpectrumGeometry(
            blue=(blue_pos[0], blue_pos[1]),
            black=(black_pos[0], black_pos[1]),
            window_radius=int(an_s.get("window_radius", 3)),
            peak_metric=an_s.get("peak_metric", "max_abs").strip(),
        )
        geometry.validate_for(dims)

        ep_s = parser["endpoints"] if parser.has_section("endpoints") else {}
        stream = _host_port(ep_s.get("stream", "127.0.0.1:47310"))
        counter = _host_port(ep_s.get("counter", "127.0.0.1:47311"))
        endpoints = Endpoints(
            stream_host=stream[0],
            stream_port=stream[1],
            counter_host=counter[0],
            counter_port=counter[1],
            ring_name=ep_s.get("ring", "pulsesync-ring").strip(),
            ring_capacity=int(ep_s.get("ring_capacity", 8)),
        )

        run_s = parser["run"] if parser.has_section("run") else {}
        seed = int(run_s.get("seed", 12345))
        out_dir = Path(run_s.get("out_dir", "runs/out"))
        if not out_dir.is_absolute():
            out_dir = path.parent / out_dir
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid scenario {path}: {exc}") from exc

    return ScenarioConfig(
        laser=laser,
        phantom=phantom,
        pathology=pathology,
        energies=energies,
        geometry=geometry,
        endpoints=endpoints,
        seed=seed,
        out_dir=out_dir,
        config_hash=hashlib.sha256(raw_bytes).hexdigest(),
    )
