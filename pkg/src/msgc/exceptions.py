"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto process exit codes, so each class carries one.
"""


class MSGCError(Exception):
    exit_code = 1


class DimensionError(MSGCError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 3


class ContractError(MSGCError, ValueError):
    """A call violated a documented precondition."""

    exit_code = 2


class NumericError(MSGCError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""

    exit_code = 4


class IngestionError(MSGCError, ValueError):
    exit_code = 3


class DatasetTooSmallError(MSGCError, ValueError):
    exit_code = 3


class DegenerateGraphError(MSGCError, ValueError):
    exit_code = 3


class MetricError(MSGCError, ValueError):
    exit_code = 3


class ConfigError(MSGCError, ValueError):
    exit_code = 2


class TrainingError(MSGCError, RuntimeError):
    exit_code = 4
