"""Exception types shared across the package."""


class UwbCalError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateGeometry(UwbCalError):
    """Geometric construction impossible (inconsistent or singular inputs)."""

    def __init__(self, message, anchor_id=None):
        super().__init__(message)
        self.anchor_id = anchor_id


class LengthMismatch(UwbCalError):
    """Paired sequences have different lengths."""


class InvalidTiming(UwbCalError):
    """Two-way-ranging timings violate causality or sign constraints."""


class InsufficientData(UwbCalError):
    """Not enough samples for the requested estimate."""


class DegenerateFit(UwbCalError):
    """Regression inputs carry no usable variation."""


class NotConverged(UwbCalError):
    """Iterative solver hit its iteration cap.

    The best iterate found so far is attached as ``result`` so callers can
    decide whether a non-converged answer is still usable.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularUpdate(UwbCalError):
    """Normal equations rank-deficient beyond what damping can absorb."""


class CollinearAnchors(UwbCalError):
    """Anchor layout is (numerically) collinear; planar fix is ambiguous."""


class ProtocolViolation(UwbCalError):
    """A node received a message its state machine does not allow."""


class EmptyTrace(UwbCalError):
    """Summary requested for a trace containing no records."""


class ConfigError(UwbCalError):
    """Scenario configuration failed validation.

    ``violations`` lists every offending field, one message each.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class CsvFormatError(UwbCalError):
    """A CSV input file does not match its documented schema."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
