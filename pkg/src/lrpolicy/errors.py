"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class LRPolicyError(Exception):
    exit_code = 1


class ConfigError(LRPolicyError):
    exit_code = 2


class ArgumentError(ConfigError, ValueError):
    """Invalid argument passed to a library function."""


class DataError(LRPolicyError):
    exit_code = 3


class EstimationError(LRPolicyError):
    exit_code = 4


class NumericError(LRPolicyError):
    exit_code = 5
