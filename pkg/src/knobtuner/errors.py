"""Exception types shared across the tuner."""


class KnobTunerError(Exception):
    """Base class for all tuner errors."""


class CatalogError(KnobTunerError):
    """Malformed catalog file or a knob violating its invariants."""


class SchemaError(KnobTunerError):
    """Malformed metric schema file."""


class MetricError(KnobTunerError):
    """Invalid frame sequence (too few frames, unordered, counter reset)."""


class PoolError(KnobTunerError):
    """Sample rejected by the pool or pool file corrupt."""


class HintError(KnobTunerError):
    """Malformed hint file or hints referencing unknown knobs."""


class DriverError(KnobTunerError):
    """External driver timed out or violated the wire protocol."""


class TrialError(KnobTunerError):
    """A single evaluation failed; the run may continue."""


class SpaceExhausted(KnobTunerError):
    """Every candidate tuple of a feasible space has been evaluated."""
