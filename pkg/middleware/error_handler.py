from pydantic import ValidationError
import logging
import traceback

from exceptions import AssertionFailure, ConfigError, StorageError, UpmlError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = ConfigError.exit_code
EXIT_NUMERICAL = 2
EXIT_ASSERTION = AssertionFailure.exit_code
EXIT_IO = StorageError.exit_code
EXIT_INTERNAL = 5  # programming errors: anything not raised on purpose


def validation_exception_handler(exc: ValidationError) -> int:
    """Handle config validation errors"""
    logger.error(f"Configuration rejected ({exc.error_count()} problem(s)):")
    for err in exc.errors():
        location = ".".join(str(part) for part in err.get("loc", ())) or "<root>"
        logger.error(f"  {location}: {err.get('msg')}")
    return EXIT_CONFIG


def upml_exception_handler(exc: UpmlError) -> int:
    """Handle lab errors: each family carries its exit code"""
    logger.error(f"{type(exc).__name__}: {exc}")
    if isinstance(exc, AssertionFailure):
        for violation in exc.violations[:20]:
            logger.error(f"  {violation}")
        if len(exc.violations) > 20:
            logger.error(f"  ... {len(exc.violations) - 20} more")
    logger.debug(traceback.format_exc())
    return exc.exit_code


def io_exception_handler(exc: OSError) -> int:
    logger.error(f"I/O error: {exc}")
    return EXIT_IO


def arithmetic_exception_handler(exc: ArithmeticError) -> int:
    logger.error(f"Floating-point failure: {exc}")
    return EXIT_NUMERICAL


def general_exception_handler(exc: Exception) -> int:
    """Handle general exceptions"""
    logger.error(f"Internal error: {type(exc).__name__}: {exc}\n{traceback.format_exc()}")
    return EXIT_INTERNAL


def handle_exception(exc: BaseException) -> int:
    """Dispatch to the matching handler and return the process exit code."""
    if isinstance(exc, ValidationError):
        return validation_exception_handler(exc)
    if isinstance(exc, UpmlError):
        return upml_exception_handler(exc)
    if isinstance(exc, OSError):
        return io_exception_handler(exc)
    if isinstance(exc, ArithmeticError):
        return arithmetic_exception_handler(exc)
    return general_exception_handler(exc)
