"""Exception types shared across the tuner, with stable CLI exit codes."""

from __future__ import annotations


class MltuneError(Exception):
    """Base class for all mltune-specific failures."""


class RunnerError(MltuneError):
    """A runner failed outside the measurement protocol (transport, bad
    output, unexpected exit code). Distinct from an invalid configuration."""


class InsufficientDataError(MltuneError):
    """Not enough valid samples to train (fewer valid samples than folds,
    or an empty training set)."""


class AllCandidatesInvalidError(MltuneError):
    """Every second-stage candidate turned out invalid; no result to report.

    Carries the partial tuning report gathered before the failure.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class DivergenceError(MltuneError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class ParseError(MltuneError):
    """A persisted file failed validation."""

    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}: "
        if line is not None:
            loc += f"line {line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ConfigMismatchError(MltuneError):
    """A configuration does not belong to the expected parameter space."""


class InvalidConfigurationError(MltuneError):
    """An operation that requires a valid configuration was given an
    invalid one."""


class EmptySpaceError(MltuneError):
    """A search over a space found no valid configuration at all."""


# CLI exit codes (stable API).
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNNER = 3
EXIT_ALL_INVALID = 4
EXIT_INSUFFICIENT_DATA = 5
