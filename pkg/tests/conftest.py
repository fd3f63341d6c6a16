import numpy as np
import pytest

from pulsesync.client import SpectrumGeometry
from pulsesync.protocol import decode_all, encode_packet
from pulsesync.server import PackageAccumulator
from pulsesync.session import SessionWriter
from pulsesync.simulate import (
    CollectSink,
    DaqPathology,
    LaserConfig,
    PhantomModel,
    PhantomTarget,
    run_daq,
)
from pulsesync.triggers import Layout, WavelengthSequence

BLUE_SPECTRUM = (1.00, 0.80, 0.62, 0.50)
BLACK_SPECTRUM = (1.0, 1.0, 1.0, 1.0)
BLUE_POS = (16, 12)
BLACK_POS = (44, 36)


def make_phantom(noise=0.0, dims=(64, 48)):
    return PhantomModel(
        targets=(
            PhantomTarget("blue", BLUE_POS[0], BLUE_POS[1], BLUE_SPECTRUM),
            PhantomTarget("black", BLACK_POS[0], BLACK_POS[1], BLACK_SPECTRUM),
        ),
        frame_dims=dims,
        noise_sigma=noise,
        base_amplitude=8000.0,
    )


def make_geometry(radius=2):
    return SpectrumGeometry(blue=BLUE_POS, black=BLACK_POS, window_radius=radius)


def simulate_session(
    directory,
    *,
    frames_per_wavelength=3,
    packages=2,
    noise=0.0,
    energy_jitter=0.0,
    drop_probability=0.0,
    seed=1234,
    layout=Layout.CYCLIC,
    prep=2,
    extra_pulses=0,
):
    """Run the simulator and persist its packets as a raw session; returns
    (session_dir, completed packages, daq report, scenario pieces)."""
    seq = WavelengthSequence((700.0, 740.0, 760.0, 780.0), layout, frames_per_wavelength)
    laser = LaserConfig(
        sequence=seq,
        total_effective_pulses=1 + packages * seq.frames_per_package + extra_pulses,
        prep_flashlamp_pulses=prep,
        energy_jitter=energy_jitter,
    )
    phantom = make_phantom(noise=noise)
    pathology = (
        DaqPathology(frame_drop_probability=drop_probability, start_delay_jitter_ns=0)
        if drop_probability
        else DaqPathology.none()
    )
    sink = CollectSink()
    report = run_daq(laser, phantom, pathology, None, sink, seed=seed)

    session_dir = directory / "session"
    writer = SessionWriter(session_dir, seq, geometry=None)
    acc = PackageAccumulator(seq)
    completed = []
    for counter, frame, flags in sink.packets:
        data = encode_packet(
            counter, frame.samples, timestamp_ns=frame.acquisition_timestamp_ns, flags=flags
        )
        (packet,) = decode_all(data)
        result = acc.accept(packet)
        assert result.reject is None
        writer.append(data, packet)
        completed.extend(result.completed)
    completed.extend(acc.finish())
    writer.close()
    return session_dir, completed, report, (seq, laser, phantom)


@pytest.fixture
def geometry():
    return make_geometry()
