"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ProjTractorError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ProjTractorError, ValueError):
    """Mismatched dimensions, slot kinds or extents."""


class KindError(ShapeError):
    """A slot of the wrong kind was passed to an operation."""


class ScaleError(ProjTractorError, ValueError):
    """Tractor data expressed in two different splittings were combined."""


class OrderError(ProjTractorError, ValueError):
    """A jet does not carry enough derivatives for the requested operation."""


class SingularityError(ProjTractorError, ArithmeticError):
    """Division by a vanishing quantity (jet with zero value, singular matrix)."""


class NonFiniteError(ProjTractorError, ArithmeticError):
    """A field produced a non-finite Taylor coefficient."""

    def __init__(self, message: str, multi_index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.multi_index = multi_index


class DomainError(ProjTractorError, ValueError):
    """An elementary function was evaluated outside its domain."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
        self.position = position


class ExprSyntaxError(ProjTractorError, SyntaxError):
    """Malformed expression text. ``offset`` is a 0-based byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class ExprNameError(ProjTractorError, NameError):
    """Unknown identifier in an expression."""

    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset


class UnsupportedRankError(ProjTractorError, NotImplementedError):
    """The requested Killing rank has no explicit implementation."""


class PreconditionError(ProjTractorError, ValueError):
    """An operation's mathematical precondition does not hold."""


class ConsistencyError(ProjTractorError, RuntimeError):
    """Two independent computations of the same quantity disagree."""


class DomainExitError(ProjTractorError, RuntimeError):
    """An integrated curve left the chart bounding box."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6g})")
        self.time = time


class ConfigError(ProjTractorError, ValueError):
    """Invalid geometry configuration."""
