"""
Exception hierarchy for the UPML lab.

Library code raises these; only the CLI layer (middleware/error_handler.py)
turns them into exit codes.
"""

from typing import Optional, Tuple


class UpmlError(Exception):
    """Base class for every error raised by the lab."""

    exit_code = 1


# ==================== CONFIGURATION (exit 1) ====================

class ConfigError(UpmlError):
    """A configuration value breaks a model invariant."""

    exit_code = 1

    def __init__(self, message: str, rule: Optional[str] = None):
        self.rule = rule
        super().__init__(f"{message} [{rule}]" if rule else message)


class GridAlignmentError(ConfigError):
    pass


class EnlargementError(ConfigError):
    pass


class SourceSupportError(ConfigError):
    pass


# ==================== NUMERICAL (exit 2) ====================

class NumericalError(UpmlError):
    exit_code = 2


class NonFiniteFieldError(NumericalError):
    """NaN or Inf found in a field array."""

    def __init__(self, step_index: int, component: str, location: Tuple[int, ...]):
        self.step_index = step_index
        self.component = component
        self.location = location
        super().__init__(
            f"non-finite value in {component} at index {location} after step {step_index}"
        )


class DegenerateDistanceError(NumericalError):
    pass


class NearSurfaceError(NumericalError):
    pass


class AbscissaMismatchError(NumericalError):
    pass


# ==================== ASSERTIONS (exit 3) ====================

class AssertionFailure(UpmlError):
    """A property suite or acceptance threshold was not met."""

    exit_code = 3

    def __init__(self, message: str, violations: Optional[list] = None):
        self.violations = violations or []
        super().__init__(message)


class InsufficientDataError(AssertionFailure):
    pass


# ==================== STORAGE (exit 4) ====================

class StorageError(UpmlError):
    exit_code = 4


class StorageBudgetError(StorageError):
    def __init__(self, required_bytes: int, budget_bytes: int):
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes
        super().__init__(
            f"field history needs {required_bytes} bytes, budget is {budget_bytes} bytes"
        )
