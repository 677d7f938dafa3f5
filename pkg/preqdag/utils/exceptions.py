import logging
from typing import Optional, Sequence

from preqdag.schemas.base import ErrorCode, ERROR_MESSAGES, ExitCode

logger = logging.getLogger(__name__)


class PreqException(Exception):
    """Base exception carrying an error code and a CLI exit status"""

    def __init__(
        self,
        code: ErrorCode = ErrorCode.SERVER_ERROR,
        message: Optional[str] = None,
        exit_code: ExitCode = ExitCode.UNEXPECTED,
    ):
        self.code = code
        self.message = message or ERROR_MESSAGES.get(code, "Unknown error")
        self.exit_code = exit_code
        super().__init__(self.message)


class ConfigException(PreqException):
    """Invalid or inconsistent configuration"""

    def __init__(self, message: Optional[str] = None):
        super().__init__(
            code=ErrorCode.CONFIG_ERROR,
            message=message,
            exit_code=ExitCode.CONFIG,
        )


class ValidationException(PreqException):
    """Argument out of range or shapes that do not line up"""

    def __init__(self, message: Optional[str] = None):
        super().__init__(
            code=ErrorCode.PARAM_ERROR,
            message=message,
            exit_code=ExitCode.DATA,
        )


class DataException(PreqException):
    """Dataset cannot be read or violates its declared format"""

    def __init__(self, message: Optional[str] = None):
        super().__init__(
            code=ErrorCode.DATA_ERROR,
            message=message,
            exit_code=ExitCode.DATA,
        )


class CapacityException(PreqException):
    """Requested enumeration or search is too large"""

    def __init__(self, message: Optional[str] = None):
        super().__init__(
            code=ErrorCode.CAPACITY_EXCEEDED,
            message=message,
            exit_code=ExitCode.CONFIG,
        )


class InvariantViolationException(PreqException):
    """A structural invariant (e.g. acyclicity) does not hold"""

    def __init__(self, message: Optional[str] = None):
        super().__init__(
            code=ErrorCode.INVARIANT_VIOLATION,
            message=message,
            exit_code=ExitCode.DATA,
        )


class ScheduleException(PreqException):
    """Split schedule cannot be built for the requested block count"""

    def __init__(self, message: Optional[str] = None):
        super().__init__(
            code=ErrorCode.SCHEDULE_ERROR,
            message=message,
            exit_code=ExitCode.CONFIG,
        )


class TrainingException(PreqException):
    """Neural CPD cannot be trained on the given history"""

    def __init__(self, message: Optional[str] = None):
        super().__init__(
            code=ErrorCode.TRAINING_ERROR,
            message=message,
            exit_code=ExitCode.DATA,
        )


class CacheException(PreqException):
    """Score cache is unreadable or was built for other inputs"""

    def __init__(
        self,
        message: Optional[str] = None,
        code: ErrorCode = ErrorCode.CACHE_ERROR,
    ):
        super().__init__(code=code, message=message, exit_code=ExitCode.CACHE)


class CacheMissException(CacheException):
    """Score cache has no entry for a (node, parent-set) pair"""

    def __init__(self, node: int, parents: Sequence[int]):
        self.node = node
        self.parents = tuple(parents)
        super().__init__(
            message=f"no cached score for node {node} with parents {list(self.parents)}",
            code=ErrorCode.CACHE_MISS,
        )


def handle_exception(exc: BaseException) -> int:
    """Log an exception and return the matching process exit status"""
    if isinstance(exc, PreqException):
        logger.error("%s (code %d)", exc.message, int(exc.code))
        return int(exc.exit_code)
    logger.exception("Unexpected error: %s", exc)
    return int(ExitCode.UNEXPECTED)
