"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class OtdrError(Exception):
    exit_code = 1


class ConfigError(OtdrError, ValueError):
    """Invalid configuration, argument or randomization spec."""

    exit_code = 2


class SpecError(ConfigError):
    pass


class ResourceError(ConfigError):
    pass


class DataError(OtdrError, ValueError):
    """Bad input data, corrupted files, undefined metrics."""

    exit_code = 3


class ExtractionError(DataError):
    pass


class EstimationError(DataError):
    pass


class IntegrityError(DataError):
    pass


class VersionError(DataError):
    pass


class CompatibilityError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class SampleSizeError(DataError):
    pass


class CalibrationError(DataError):
    pass


class NumericError(OtdrError, ArithmeticError):
    exit_code = 4


class ShapeError(OtdrError, ValueError):
    exit_code = 4
