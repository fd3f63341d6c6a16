import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsesync.errors import ConfigError, MonotonicityError, ShiftUnderflowError
from pulsesync.triggers import (
    DEFAULT_PAIRING_WINDOW_NS,
    FrameSlot,
    Layout,
    PulseCounter,
    TriggerEvent,
    TriggerKind,
    WavelengthSequence,
    assign_wavelength,
    is_effective_frame,
)

from .oracles import layout_tuples, pair_match_count

FL = TriggerKind.FLASHLAMP
QS = TriggerKind.QSWITCH


def ev(kind, t):
    return TriggerEvent(kind, t)


def feed(events, window_ns=DEFAULT_PAIRING_WINDOW_NS):
    counter = PulseCounter(pairing_window_ns=window_ns)
    for e in events:
        counter.ingest(e)
    return counter


class TestPulseCounter:
    def test_flashlamp_alone_never_counts(self):
        counter = feed([ev(FL, 0)])
        assert counter.count == 0
        assert counter.pending_flashlamp_ns == 0

    def test_pair_within_window_counts(self):
        counter = feed([ev(FL, 0), ev(QS, 200_000)])
        assert counter.count == 1
        assert counter.pending_flashlamp_ns is None

    def test_qswitch_outside_window_does_not_count(self):
        # window 500 us, delta 900 us
        counter = feed([ev(FL, 0), ev(QS, 900_000)], window_ns=500_000)
        assert counter.count == 0
        assert counter.pending_flashlamp_ns is None  # expired

    def test_window_boundary_grid_matches_rule(self):
        # sweep (delta, window) combinations: increment iff delta <= window
        for window_us in (1, 10, 137, 500, 1000):
            for delta_us in (0, 1, 9, 10, 136, 137, 138, 499, 500, 501, 999, 1000, 1001):
                counter = feed(
                    [ev(FL, 1_000), ev(QS, 1_000 + delta_us * 1_000)],
                    window_ns=window_us * 1_000,
                )
                assert counter.count == (1 if delta_us <= window_us else 0), (
                    delta_us,
                    window_us,
                )

    def test_two_pairs(self):
        counter = feed([ev(FL, 0), ev(QS, 1), ev(FL, 10), ev(QS, 11)])
        assert counter.count == 2

    def test_second_flashlamp_replaces_pending(self):
        counter = feed([ev(FL, 0), ev(FL, 100), ev(QS, 200)])
        assert counter.count == 1
        # oracle agrees
        assert pair_match_count(
            [ev(FL, 0), ev(FL, 100), ev(QS, 200)], DEFAULT_PAIRING_WINDOW_NS
        ) == 1

    def test_qswitch_without_flashlamp_dropped(self):
        counter = feed([ev(QS, 5), ev(QS, 10)])
        assert counter.count == 0

    def test_qswitch_after_pairing_does_not_double_count(self):
        counter = feed([ev(FL, 0), ev(QS, 1), ev(QS, 2)])
        assert counter.count == 1

    def test_equal_timestamps_allowed(self):
        counter = feed([ev(FL, 5), ev(QS, 5)])
        assert counter.count == 1

    def test_out_of_order_rejected(self):
        counter = PulseCounter()
        counter.ingest(ev(FL, 100))
        with pytest.raises(MonotonicityError):
            counter.ingest(ev(QS, 99))

    def test_reset(self):
        counter = feed([ev(FL, 0), ev(QS, 1)])
        counter.reset()
        assert counter.count == 0
        counter.ingest(ev(FL, 0))  # timestamps may restart after reset
        counter.ingest(ev(QS, 1))
        assert counter.count == 1

    def test_query_count_has_no_side_effect(self):
        counter = feed([ev(FL, 0), ev(QS, 1)])
        assert counter.query_count() == 1
        assert counter.query_count() == 1

    def test_bad_window_rejected(self):
        with pytest.raises(ConfigError):
            PulseCounter(pairing_window_ns=0)


@st.composite
def trigger_streams(draw):
    n = draw(st.integers(min_value=0, max_value=60))
    t = 0
    events = []
    for _ in range(n):
        t += draw(st.integers(min_value=0, max_value=1_000_000))
        kind = draw(st.sampled_from([FL, QS]))
        events.append(ev(kind, t))
    window = draw(st.integers(min_value=1, max_value=800_000))
    return events, window


class TestCounterProperties:
    @given(trigger_streams())
    @settings(max_examples=300, deadline=None)
    def test_matches_pair_matching_oracle(self, stream):
        events, window = stream
        counter = feed(events, window_ns=window)
        assert counter.count == pair_match_count(events, window)

    @given(trigger_streams())
    @settings(max_examples=100, deadline=None)
    def test_count_monotone_steps_of_one(self, stream):
        events, window = stream
        counter = PulseCounter(pairing_window_ns=window)
        prev = 0
        for e in events:
            counter.ingest(e)
            assert counter.count in (prev, prev + 1)
            prev = counter.count

    @given(st.lists(st.integers(min_value=0, max_value=10_000), max_size=50))
    @settings(max_examples=100, deadline=None)
    def test_flashlamp_only_stream_stays_zero(self, deltas):
        t = 0
        counter = PulseCounter()
        for d in deltas:
            t += d
            counter.ingest(ev(FL, t))
        assert counter.count == 0


class TestEffectiveFrame:
    def test_zero_not_effective(self):
        assert not is_effective_frame(0)

    def test_dummy_not_effective(self):
        assert not is_effective_frame(1)

    def test_two_and_up_effective(self):
        assert is_effective_frame(2)
        assert is_effective_frame(3)
        assert is_effective_frame(10_000)


CYCLIC4 = WavelengthSequence((700.0, 740.0, 760.0, 780.0), Layout.CYCLIC, 500)
BLOCK4 = WavelengthSequence((700.0, 740.0, 760.0, 780.0), Layout.BLOCK, 500)


class TestAssignWavelength:
    def test_first_effective_frame_is_sequence_start(self):
        assert assign_wavelength(CYCLIC4, 2) == FrameSlot(0, 0, 0)

    def test_cyclic_modular_arithmetic(self):
        assert assign_wavelength(CYCLIC4, 7).wavelength_index == 1  # 740 nm

    def test_block_boundary(self):
        slot = assign_wavelength(BLOCK4, 503)
        assert slot.wavelength_index == 1  # 740 nm
        assert slot.package_index == 0
        assert slot.slot_index == 1

    @pytest.mark.parametrize("layout", [Layout.CYCLIC, Layout.BLOCK])
    @pytest.mark.parametrize("w,n", [(4, 500), (4, 3), (3, 5), (1, 7), (5, 1)])
    def test_matches_layout_enumeration(self, layout, w, n):
        seq = WavelengthSequence(tuple(700.0 + 10 * i for i in range(w)), layout, n)
        expected = layout_tuples(layout, w, n, 4001)
        for k in range(4001):
            slot = assign_wavelength(seq, k + 2)
            assert (slot.package_index, slot.wavelength_index, slot.slot_index) == expected[k]

    def test_plus_minus_two_equivalence_mod_four(self):
        seq = WavelengthSequence((700.0, 740.0, 760.0, 780.0), Layout.CYCLIC, 3)
        for count in range(4, 200):  # both shifts defined from count 4
            up = assign_wavelength(seq, count, +2)
            down = assign_wavelength(seq, count, -2)
            assert up.wavelength_index == down.wavelength_index

    def test_shift_underflow(self):
        with pytest.raises(ShiftUnderflowError):
            assign_wavelength(CYCLIC4, 2, -1)
        with pytest.raises(ShiftUnderflowError):
            assign_wavelength(CYCLIC4, 3, -2)

    @given(
        st.integers(min_value=1, max_value=6),
        st.integers(min_value=1, max_value=7),
        st.integers(min_value=1, max_value=4),
        st.sampled_from([Layout.CYCLIC, Layout.BLOCK]),
    )
    @settings(max_examples=60, deadline=None)
    def test_bijection_over_gapless_stream(self, w, n, packages, layout):
        seq = WavelengthSequence(tuple(600.0 + i for i in range(w)), layout, n)
        total = w * n * packages
        seen = set()
        for k in range(total):
            slot = assign_wavelength(seq, k + 2)
            assert 0 <= slot.wavelength_index < w
            assert 0 <= slot.slot_index < n
            assert 0 <= slot.package_index < packages
            seen.add((slot.package_index, slot.wavelength_index, slot.slot_index))
        assert len(seen) == total  # every slot filled exactly once

    @given(
        st.integers(min_value=1, max_value=6),
        st.integers(min_value=1, max_value=5),
        st.integers(min_value=-3, max_value=3),
        st.integers(min_value=2, max_value=120),
    )
    @settings(max_examples=150, deadline=None)
    def test_cyclic_shift_period_is_w(self, w, n, shift, count):
        seq = WavelengthSequence(tuple(600.0 + i for i in range(w)), layout=Layout.CYCLIC, frames_per_wavelength=n)
        if count - 2 + shift < 0:
            return
        a = assign_wavelength(seq, count, shift)
        b = assign_wavelength(seq, count, shift + w)
        assert a.wavelength_index == b.wavelength_index


class TestSequenceValidation:
    def test_duplicate_wavelengths_rejected(self):
        with pytest.raises(ConfigError):
            WavelengthSequence((700.0, 700.0), Layout.CYCLIC, 5)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            WavelengthSequence((), Layout.CYCLIC, 5)

    def test_zero_frames_rejected(self):
        with pytest.raises(ConfigError):
            WavelengthSequence((700.0,), Layout.CYCLIC, 0)
