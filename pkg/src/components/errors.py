"""
Error types for the ensemble attack toolkit
Each error also derives from the builtin it specialises so plain except clauses keep working
"""

from typing import Optional


class EadvError(Exception):
    """Base class for all toolkit errors"""

    exit_status = 1


class AudioFormatError(EadvError, ValueError):
    """Malformed or unsupported WAV file"""

    exit_status = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ArgumentError(EadvError, ValueError):
    """Shape, range or precondition violation in an operation argument"""

    exit_status = 2


class ConfigError(EadvError, ValueError):
    """Invalid attack configuration or unreadable config file"""

    exit_status = 2


class PreconditionError(EadvError, RuntimeError):
    """An input artifact is not in the state an operation requires"""

    exit_status = 2


class TrainingDivergedError(EadvError, RuntimeError):
    """Surrogate training failed to reach the minimum accuracy"""

    exit_status = 3

    def __init__(self, arch: str, accuracy: float):
        self.arch = arch
        self.accuracy = accuracy
        super().__init__(f"{arch} reached only {accuracy:.3f} training accuracy")


class NumericError(EadvError, ArithmeticError):
    """Non-finite loss or gradient during an attack"""

    exit_status = 4

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
