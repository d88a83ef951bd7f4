"""Error hierarchy shared by the estimation core and the command line.

Every error carries the exit code the CLI reports for it:
1 for usage/configuration, 2 for data, 3 for numerical failures.
"""


class MeloError(Exception):
    exit_code = 3


class ConfigError(MeloError):
    exit_code = 1


class DataError(MeloError):
    exit_code = 2


class EmptyFile(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column: str, path: str = ""):
        self.column = column
        super().__init__(f"missing column '{column}'" + (f" in {path}" if path else ""))


class ParseError(DataError):
    def __init__(self, row: int, column: str, value: str, reason: str = "non-numeric value"):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column '{column}': {reason} {value!r}")


class NumericalError(MeloError):
    exit_code = 3


class NonPositiveDefinite(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class InsufficientData(NumericalError):
    pass


class CompleteSeparation(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    pass


class NonFiniteTarget(NumericalError):
    pass


class MomentsUndefined(NumericalError):
    pass


class MissingAugmentation(NumericalError):
    pass


class SamplerQuality(NumericalError):
    pass


class UnsupportedDimension(NumericalError):
    pass


class DimensionMismatch(NumericalError):
    pass


class EmptySummary(NumericalError):
    pass


class InvalidParameter(MeloError):
    exit_code = 1
