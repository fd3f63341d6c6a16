"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

Everything per-sample lives here: Gaussian blob deposition for the frame
synthesizer, float64 -> int16 quantization with saturation detection, frame
accumulation for the averaging server, and windowed peak extraction for the
spectrum consumer.

Selection: the numba path is used when numba imports cleanly, unless the
environment variable ``PULSESYNC_NO_NUMBA`` is set to anything but ``0``/
empty, which forces the numpy path. ``benchmarks/bench_kernels.py`` times
one against the other.

Both paths use identical arithmetic expressions (same exponent form, same
floor(x + 0.5) rounding) so they agree except for possible last-ulp
differences in exp(); results on quantized int16 data are identical.
"""

import math
import os

import numpy as np

INT16_MIN = -32768
INT16_MAX = 32767


# ---------------------------------------------------------------------------
# pure-numpy implementations

def _np_deposit_gaussian(canvas, axial, lateral, amplitude, sigma_axial, sigma_lateral):
    """Add a truncated Gaussian blob (peak = amplitude) centered at integer
    sample position (axial, lateral). Window is +/- 4 sigma."""
    ra = int(math.ceil(4.0 * sigma_axial))
    rl = int(math.ceil(4.0 * sigma_lateral))
    a0 = max(axial - ra, 0)
    a1 = min(axial + ra + 1, canvas.shape[0])
    l0 = max(lateral - rl, 0)
    l1 = min(lateral + rl + 1, canvas.shape[1])
    if a0 >= a1 or l0 >= l1:
        return
    da = np.arange(a0, a1, dtype=np.float64) - float(axial)
    dl = np.arange(l0, l1, dtype=np.float64) - float(lateral)
    ea = -(da * da) / (2.0 * sigma_axial * sigma_axial)
    el = -(dl * dl) / (2.0 * sigma_lateral * sigma_lateral)
    canvas[a0:a1, l0:l1] += amplitude * np.exp(ea[:, None] + el[None, :])


def _np_quantize_int16(canvas):
    """Round half-up and clamp into int16; returns (samples, clipped)."""
    rounded = np.floor(canvas + 0.5)
    clipped = bool((rounded > INT16_MAX).any() or (rounded < INT16_MIN).any())
    return np.clip(rounded, INT16_MIN, INT16_MAX).astype(np.int16), clipped


def _np_accumulate(acc, samples):
    """acc += samples, elementwise into float64."""
    acc += samples


def _np_window_peak_abs(plane, a0, a1, l0, l1):
    return float(np.abs(plane[a0:a1, l0:l1]).max())


def _np_window_mean_abs(plane, a0, a1, l0, l1):
    return float(np.abs(plane[a0:a1, l0:l1]).mean())


NUMPY_IMPLS = {
    "deposit_gaussian": _np_deposit_gaussian,
    "quantize_int16": _np_quantize_int16,
    "accumulate": _np_accumulate,
    "window_peak_abs": _np_window_peak_abs,
    "window_mean_abs": _np_window_mean_abs,
}


# ---------------------------------------------------------------------------
# numba implementations

def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def deposit_gaussian(canvas, axial, lateral, amplitude, sigma_axial, sigma_lateral):
        ra = int(math.ceil(4.0 * sigma_axial))
        rl = int(math.ceil(4.0 * sigma_lateral))
        a0 = max(axial - ra, 0)
        a1 = min(axial + ra + 1, canvas.shape[0])
        l0 = max(lateral - rl, 0)
        l1 = min(lateral + rl + 1, canvas.shape[1])
        inv_a = 1.0 / (2.0 * sigma_axial * sigma_axial)
        inv_l = 1.0 / (2.0 * sigma_lateral * sigma_lateral)
        for i in range(a0, a1):
            da = float(i - axial)
            ea = -(da * da) * inv_a
            for j in range(l0, l1):
                dl = float(j - lateral)
                el = -(dl * dl) * inv_l
                canvas[i, j] += amplitude * math.exp(ea + el)

    @njit(cache=True)
    def quantize_int16(canvas):
        out = np.empty(canvas.shape, dtype=np.int16)
        clipped = False
        for i in range(canvas.shape[0]):
            for j in range(canvas.shape[1]):
                v = math.floor(canvas[i, j] + 0.5)
                if v > INT16_MAX:
                    v = INT16_MAX
                    clipped = True
                elif v < INT16_MIN:
                    v = INT16_MIN
                    clipped = True
                out[i, j] = np.int16(v)
        return out, clipped

    @njit(cache=True)
    def accumulate(acc, samples):
        for i in range(acc.shape[0]):
            for j in range(acc.shape[1]):
                acc[i, j] += samples[i, j]

    @njit(cache=True)
    def window_peak_abs(plane, a0, a1, l0, l1):
        peak = 0.0
        for i in range(a0, a1):
            for j in range(l0, l1):
                v = abs(plane[i, j])
                if v > peak:
                    peak = v
        return peak

    @njit(cache=True)
    def window_mean_abs(plane, a0, a1, l0, l1):
        total = 0.0
        for i in range(a0, a1):
            for j in range(l0, l1):
                total += abs(plane[i, j])
        return total / ((a1 - a0) * (l1 - l0))

    return {
        "deposit_gaussian": deposit_gaussian,
        "quantize_int16": quantize_int16,
        "accumulate": accumulate,
        "window_peak_abs": window_peak_abs,
        "window_mean_abs": window_mean_abs,
    }


_disabled = os.environ.get("PULSESYNC_NO_NUMBA", "").strip() not in ("", "0")
NUMBA_IMPLS = None
if not _disabled:
    try:
        NUMBA_IMPLS = _build_numba_impls()
    except ImportError:
        NUMBA_IMPLS = None

_active = NUMBA_IMPLS if NUMBA_IMPLS is not None else NUMPY_IMPLS

deposit_gaussian = _active["deposit_gaussian"]
quantize_int16 = _active["quantize_int16"]
accumulate = _active["accumulate"]
window_peak_abs = _active["window_peak_abs"]
window_mean_abs = _active["window_mean_abs"]


def using_numba() -> bool:
    """True when the compiled kernel path is active."""
    return _active is NUMBA_IMPLS and NUMBA_IMPLS is not None
