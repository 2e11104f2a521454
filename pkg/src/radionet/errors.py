"""Exception hierarchy shared by every radionet module."""
from __future__ import annotations


class RadioNetError(Exception):
    """Base class for all library errors."""


class ConfigError(RadioNetError):
    """A scenario or protocol constant failed validation."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class PreconditionViolated(RadioNetError):
    """A protocol was invoked outside its documented input contract."""


class OverlapError(PreconditionViolated):
    """Two groups that should be disjoint share a member."""


class NoActiveDevices(PreconditionViolated):
    """A protocol that needs at least one participant got none."""


class ModelUnsupported(PreconditionViolated):
    """The protocol cannot run under the requested collision-detection model."""


class NTooSmall(PreconditionViolated):
    """The size estimate handed to an ID-assignment step is below its floor."""


class DensityViolated(PreconditionViolated):
    """A dense protocol ran with fewer active devices than c * N."""


class LeaderGroupTooSmall(RadioNetError):
    """The surviving dense group cannot cover every census part."""


class InvalidSchedule(ConfigError):
    """A checkpoint schedule violates growth or lower-bound constraints."""


class InvalidCircuit(RadioNetError):
    """A circuit description is malformed or not topologically ordered."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyInput(RadioNetError):
    """Aggregation was asked to summarize zero records."""


class MessageTooLarge(RadioNetError):
    """A transmitted payload exceeds the channel's configured cap."""


class SlotLimitExceeded(RadioNetError):
    """Execution hit its slot budget; the partial transcript is attached."""

    def __init__(self, message: str, transcript=None):
        super().__init__(message)
        self.transcript = transcript
