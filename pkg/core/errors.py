# core/errors.py
"""Exception hierarchy shared by every DavidSim module."""

from typing import Any, Optional


class DavidError(Exception):
    """Base class for all domain errors raised by DavidSim."""


# ===== Tensor / Graph =====


class ShapeMismatch(DavidError):
    """Tensor shapes or channel counts are inconsistent."""


class UnknownLayerKind(DavidError):
    """A LayerSpec names a kind the executor does not implement."""


class NumericalError(DavidError):
    """Arithmetic precondition violated (bad variance, accumulator overflow)."""


class ConfigError(DavidError):
    """A configuration object violates its invariants."""


class GraphError(ConfigError):
    """A GraphSpec is malformed or cannot be executed."""


class UnknownOutput(DavidError):
    """Requested output id does not exist in the graph."""


# ===== Analyzer / Porting =====


class BudgetExceeded(DavidError):
    """Estimated power exceeds the configured budget."""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report


class DegenerateModel(DavidError):
    """Pruning removed every weight of a layer."""


# ===== Text =====


class InvalidCharacter(DavidError):
    """Text contains a symbol outside the vocabulary."""


class EmptyInput(DavidError):
    """Input sequence is empty."""


class EmptyOutput(DavidError):
    """Operation would produce an empty sequence."""


# ===== Bus =====


class FrameError(DavidError):
    """Base class for wire-format decode failures."""


class CrcMismatch(FrameError):
    pass


class BadSync(FrameError):
    pass


class UnsupportedVersion(FrameError):
    pass


class Truncated(FrameError):
    pass


class UnknownMessageType(DavidError):
    """msg_type has no schema in the registry."""


class NotPaired(DavidError):
    pass


class AlreadyPaired(DavidError):
    pass


class AuthenticationFailure(DavidError):
    """A secure chunk failed tag verification or was replayed."""


# ===== Simulation =====


class Busy(DavidError):
    """Node is flashing and cannot accept another re-flash."""


class ScriptError(DavidError):
    """Scenario script is malformed."""


class ZeroPower(DavidError):
    pass


class ZeroCapacity(DavidError):
    pass


class UnsupportedAction(DavidError):
    """Action is not exposed by the configured embodiment."""


class FlashCapacityExceeded(ConfigError):
    """Firmware image does not fit into node flash."""
