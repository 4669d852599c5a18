"""Exception hierarchy shared by all tilegrade modules."""


class TileGradeError(Exception):
    """Base class for every error raised by this package."""


# network construction

class NetworkError(TileGradeError, ValueError):
    pass


class CycleDetected(NetworkError):
    pass


class MissingCpd(NetworkError):
    pass


class RowNotNormalized(NetworkError):
    def __init__(self, variable, row, total):
        self.variable = variable
        self.row = row
        self.total = total
        super().__init__(
            f"CPD row {row} of {variable!r} sums to {total!r}, not 1"
        )


class CardinalityMismatch(NetworkError):
    pass


class DuplicateFeatureName(NetworkError):
    pass


class InvalidEvidence(NetworkError):
    pass


# inference

class InferenceError(TileGradeError):
    pass


class TargetObserved(InferenceError, ValueError):
    pass


class ZeroProbabilityEvidence(InferenceError):
    pass


class StateSpaceTooLarge(InferenceError):
    pass


# learning and ingestion

class LearningError(TileGradeError, ValueError):
    pass


class SchemaMismatch(LearningError):
    pass


class EmptyDataset(LearningError):
    pass


class DegenerateRow(LearningError):
    pass


class ParseError(LearningError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column!r}"
            where += ": "
        super().__init__(where + message)


class UnknownStateLabel(ParseError):
    pass


class MissingColumn(ParseError):
    pass


# refinement and simulation

class UnknownFeature(TileGradeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class MissingRequiredNode(TileGradeError, ValueError):
    pass


class ProfileMismatch(TileGradeError, ValueError):
    pass


# evaluation

class DegenerateLabels(TileGradeError, ValueError):
    pass


class LengthMismatch(TileGradeError, ValueError):
    pass


class TooFewSamples(TileGradeError, ValueError):
    pass


class ConfigInvalid(TileGradeError, ValueError):
    pass
