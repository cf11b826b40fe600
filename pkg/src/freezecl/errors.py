"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to.
"""


class FreezeCLError(Exception):
    exit_code = 1


class ConfigError(FreezeCLError):
    exit_code = 2


class HyperparameterError(ConfigError, ValueError):
    pass


class SpecError(ConfigError, ValueError):
    pass


class DataError(FreezeCLError):
    exit_code = 3


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class LabelError(DataError, ValueError):
    pass


class NumericError(FreezeCLError, ArithmeticError):
    exit_code = 4


class DimensionError(FreezeCLError, ValueError):
    pass


class EmptyInputError(FreezeCLError, ValueError):
    pass


class ContractError(FreezeCLError, RuntimeError):
    pass


class MetricError(FreezeCLError, ValueError):
    pass


class ReportError(FreezeCLError):
    pass
