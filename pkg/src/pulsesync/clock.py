"""Virtual and wall clocks.

Runs are driven by advancing a clock to each event's timestamp. The virtual
clock makes that advance free, so simulations are fast and deterministic;
the wall clock paces the same schedule against real time for live demos.
"""

import time


class VirtualClock:
    """Logical nanosecond clock: advancing costs nothing, never waits."""

    def __init__(self, start_ns: int = 0):
        self._now_ns = start_ns

    def now_ns(self) -> int:
        return self._now_ns

    def advance_to(self, t_ns: int) -> None:
        if t_ns < self._now_ns:
            raise ValueError(f"clock cannot run backwards ({t_ns} < {self._now_ns})")
        self._now_ns = t_ns


class WallClock:
    """Paces advance_to() against the host monotonic clock."""

    def __init__(self):
        self._origin_ns = time.monotonic_ns()
        self._now_ns = 0

    def now_ns(self) -> int:
        return self._now_ns

    def advance_to(self, t_ns: int) -> None:
        if t_ns < self._now_ns:
            raise ValueError(f"clock cannot run backwards ({t_ns} < {self._now_ns})")
        remaining = (self._origin_ns + t_ns) - time.monotonic_ns()
        if remaining > 0:
            time.sleep(remaining / 1e9)
        self._now_ns = t_ns
