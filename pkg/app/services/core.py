from enum import IntEnum


class ExitCode(IntEnum):
    OK = 0
    USAGE = 1
    DATA_ERROR = 2
    SOLVER_FAILURE = 3
    INTERNAL_ERROR = 4
