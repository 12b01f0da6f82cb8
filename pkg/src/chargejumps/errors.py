"""Exception hierarchy.

Every exception carries an ``exit_code`` used by the command-line front end:
2 for bad input data, 3 for analysis failures.
"""


class ChargeJumpError(Exception):
    exit_code = 3


class DataError(ChargeJumpError):
    exit_code = 2


class AnalysisError(ChargeJumpError):
    exit_code = 3


class GridMismatch(DataError):
    pass


class TooFewScans(DataError):
    pass


class ScreenFailed(TooFewScans):
    """Raised when jump screening rejects template source scans.

    ``rejected`` maps scan id to the reason it was dropped.
    """

    def __init__(self, message, rejected=None):
        super().__init__(message)
        self.rejected = dict(rejected or {})


class TemplateMissing(DataError):
    pass


class EmptySegment(AnalysisError):
    pass


class ConfigInvalid(DataError):
    pass


class BadEfficiency(AnalysisError):
    pass


class BinningMismatch(DataError):
    pass


class EmptyAboveThreshold(AnalysisError):
    pass


class DegenerateRatio(AnalysisError):
    pass
