"""Exception types shared across the package.

Every failure carries enough structure (field paths, step indices, offending
coordinates, partial results) for callers to report precisely instead of
pattern-matching message strings.
"""

from __future__ import annotations


class HomeoptError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HomeoptError):
    """A precondition or argument contract was violated."""


class DimensionError(ValidationError):
    """Vector dimensions do not match the operation's contract."""


class ConfigError(HomeoptError):
    """Invalid experiment configuration.

    ``path`` is the offending ``section.key`` when known.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class NumericBlowupError(HomeoptError):
    """A computation produced a non-finite value.

    ``step`` is the iteration at which the blow-up occurred (when stepping),
    ``coordinate`` the first offending vector index, and ``partial`` whatever
    partial result the caller had accumulated (e.g. a truncated trace).
    """

    def __init__(self, message: str, step: int | None = None,
                 coordinate: int | None = None, partial=None):
        self.step = step
        self.coordinate = coordinate
        self.partial = partial
        bits = [message]
        if step is not None:
            bits.append(f"step={step}")
        if coordinate is not None:
            bits.append(f"coordinate={coordinate}")
        super().__init__(" ".join(bits))


class RecursionOverflowError(NumericBlowupError):
    """A bound recursion exceeded float range.

    This is an expected, reportable outcome for the square-root-free regime
    with a small floor; ``partial`` holds the states before overflow.
    """


class PreconditionError(ValidationError):
    """A closed-form bound was requested outside its stated conditions.

    ``violations`` lists human-readable descriptions of every violated
    inequality.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
