"""Exception types shared across the pipeline."""


class PulseSyncError(Exception):
    """Base class for every error this package raises on purpose."""


class MonotonicityError(PulseSyncError):
    """A trigger event ran backwards in time."""


class ShiftUnderflowError(PulseSyncError):
    """Effective frame index fell before the start of the programmed sequence."""


class ConfigError(PulseSyncError):
    """Scenario or component configuration is invalid."""


class EncodeError(PulseSyncError):
    """Packet cannot be represented in the wire format."""


class CounterQueryError(PulseSyncError):
    """Counter line-protocol query failed, timed out, or returned garbage."""


class ConnectivityError(PulseSyncError):
    """A required peer (counter or stream endpoint) is unreachable."""


class StorageError(PulseSyncError):
    """Raw session persistence failed; halting because data loss must never be silent."""


class SimulationInvariantError(PulseSyncError):
    """Internal consistency check of a simulated run failed."""


class RingError(PulseSyncError):
    """Exchange ring misuse: bad capacity, oversized payload, or missing segment."""
