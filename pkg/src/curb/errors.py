"""Exception hierarchy shared across the package.

CLI exit codes: 0 success, 2 configuration, 3 protocol, 4 undefined metric.
"""


class CurbError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(CurbError):
    """Invalid specification, parameters, or missing resources."""

    exit_code = 2


class ProtocolError(CurbError):
    """Wire protocol violation: bad ordering, duplicate registration, bad ids."""

    exit_code = 3


class DecodeError(ProtocolError):
    """Malformed wire message. Carries the offending line number when known."""

    def __init__(self, message, line_no=None):
        super().__init__(message)
        self.line_no = line_no


class ReplayParameterError(ProtocolError):
    """Replay attempted with parameters that do not match the recorded run."""


class RegistrationError(CurbError):
    """ICP failed: degenerate geometry or no usable correspondences."""


class GaugeError(CurbError):
    """Pose graph component lacks an anchor edge; optimization underdetermined."""


class MetricUndefinedError(CurbError):
    """A metric has an empty or degenerate denominator."""

    exit_code = 4


class NotFoundError(CurbError):
    """Unknown id in a scene graph query."""
