from enum import IntEnum


class ErrorCode(IntEnum):
    """Error codes shared by exceptions and CLI exit statuses"""
    SUCCESS = 0
    PARAM_ERROR = 1001
    CONFIG_ERROR = 1002
    DATA_ERROR = 2001
    CAPACITY_EXCEEDED = 2002
    INVARIANT_VIOLATION = 2003
    SCHEDULE_ERROR = 2004
    TRAINING_ERROR = 2005
    CACHE_ERROR = 3001
    CACHE_MISS = 3002
    CACHE_MISMATCH = 3003
    SERVER_ERROR = 5001


ERROR_MESSAGES = {
    ErrorCode.SUCCESS: "success",
    ErrorCode.PARAM_ERROR: "invalid argument",
    ErrorCode.CONFIG_ERROR: "invalid configuration",
    ErrorCode.DATA_ERROR: "invalid or unreadable data",
    ErrorCode.CAPACITY_EXCEEDED: "problem size exceeds the supported range",
    ErrorCode.INVARIANT_VIOLATION: "internal invariant violated",
    ErrorCode.SCHEDULE_ERROR: "cannot build split schedule",
    ErrorCode.TRAINING_ERROR: "cannot train conditional model",
    ErrorCode.CACHE_ERROR: "score cache error",
    ErrorCode.CACHE_MISS: "score cache has no entry for the requested parent set",
    ErrorCode.CACHE_MISMATCH: "score cache was built for different inputs",
    ErrorCode.SERVER_ERROR: "unexpected error",
}


class ExitCode(IntEnum):
    """Process exit statuses of the command-line tool"""
    SUCCESS = 0
    UNEXPECTED = 1
    CONFIG = 2
    DATA = 3
    CACHE = 4
