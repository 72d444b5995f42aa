"""
Cyclic-NSF Errors
"""
from typing import Optional, Union

import yaml
from pyarrow.lib import ArrowException

KnownExceptions = Union[ArrowException, yaml.YAMLError, Exception]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


def interpret(e: KnownExceptions) -> KnownExceptions:
    """
    Map an exception raised by a third-party library onto our own hierarchy.
    """
    if isinstance(e, NsfError):
        return e
    if isinstance(e, ArrowException):
        return CheckpointError(f"unreadable checkpoint container: {e}")
    if isinstance(e, yaml.YAMLError):
        return ConfigurationError(f"invalid YAML: {e}")

    # give up
    return e


def exit_code_for(e: BaseException) -> int:
    """
    Process exit code for an exception that reached the command line.
    """
    e = interpret(e)
    if isinstance(e, (UsageError, ConfigurationError)):
        return EXIT_USAGE
    if isinstance(e, (AudioFormatError, F0ParseError, ArtifactFormatError, CheckpointError, OSError)):
        return EXIT_IO
    # DivergenceError, InputValidationError, GraphError and anything unexpected
    return EXIT_NUMERIC


class NsfError(Exception):
    """
    Base class for cyclic_nsf exceptions.
    """

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(NsfError):
    """
    A configuration value is out of range, inconsistent or of the wrong version.
    """

    pass


class InputValidationError(NsfError):
    """
    Numeric input violates an operation's precondition (negative F0, NaN samples,
    mismatched lengths, ...).
    """

    pass


class AudioFormatError(NsfError):
    """
    A WAV file could not be parsed. Carries the byte offset of the problem.
    """

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class F0ParseError(NsfError):
    """
    An F0 text file could not be parsed. Carries the 1-based line number.
    """

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ArtifactFormatError(NsfError):
    """
    A CSV analysis or feature file is malformed.
    """

    pass


class CheckpointError(NsfError):
    """
    Checkpoint is truncated, of another format or of an unsupported version.
    """

    pass


class GraphError(NsfError):
    """
    Gradients were requested for a loss that is not attached to the model.
    """

    pass


class DivergenceError(NsfError):
    """
    Training produced a non-finite loss.
    """

    pass


class UsageError(NsfError):
    """
    Bad command-line usage.
    """

    pass
