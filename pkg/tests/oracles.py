"""Independent reference implementations the test suite checks against.

These deliberately share no code with the package: the pair matcher scans
event lists, the layout enumerator fills packages step by step, and the
mean oracle stacks raw frames with plain numpy.
"""

import numpy as np

from pulsesync.triggers import Layout, TriggerKind


def pair_match_count(events, window_ns):
    """Brute-force pairing reference: each Q-switch consumes the most recent
    flashlamp, provided it is unconsumed, unexpired, and within the window."""
    count = 0
    consumed = set()
    expired = set()
    for i, ev in enumerate(events):
        if ev.kind is not TriggerKind.QSWITCH:
            continue
        latest_fl = None
        for j in range(i - 1, -1, -1):
            if events[j].kind is TriggerKind.FLASHLAMP:
                latest_fl = j
                break
        if latest_fl is None or latest_fl in consumed or latest_fl in expired:
            continue
        if ev.timestamp_ns - events[latest_fl].timestamp_ns <= window_ns:
            count += 1
            consumed.add(latest_fl)
        else:
            expired.add(latest_fl)
    return count


def layout_tuples(layout, num_wavelengths, frames_per_wavelength, num_frames):
    """Enumerate (package, wavelength, slot) by explicitly filling packages
    in firing order, one frame at a time."""
    out = []
    package = 0
    while len(out) < num_frames:
        if layout is Layout.CYCLIC:
            for slot in range(frames_per_wavelength):
                for w in range(num_wavelengths):
                    out.append((package, w, slot))
        else:
            for w in range(num_wavelengths):
                for slot in range(frames_per_wavelength):
                    out.append((package, w, slot))
        package += 1
    return out[:num_frames]


def offline_package_means(records, num_wavelengths):
    """Recompute per-package mean tensors by stacking persisted raw frames.

    Returns {package_index: (tensor, frames_used)} with zero slices for
    wavelengths that received nothing.
    """
    by_package = {}
    dims = None
    for rec in records:
        dims = rec.packet.samples.shape
        by_package.setdefault(rec.package_index, {}).setdefault(rec.wavelength_index, []).append(
            np.asarray(rec.packet.samples, dtype=np.float64)
        )
    out = {}
    for p, groups in sorted(by_package.items()):
        tensor = np.zeros((*dims, num_wavelengths), dtype=np.float64)
        used = [0] * num_wavelengths
        for w, frames in groups.items():
            tensor[:, :, w] = np.mean(np.stack(frames), axis=0)
            used[w] = len(frames)
        out[p] = (tensor, tuple(used))
    return out
