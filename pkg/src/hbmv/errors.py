"""Package-wide exceptions and warnings.

Every error type owns a distinct process exit code so the CLI can map
failures onto machine-readable statuses.
"""


class HbmvError(Exception):
    """Base class for all model and tooling errors."""

    exit_code = 40


class UsageError(HbmvError):
    exit_code = 2


class EmptyDataset(HbmvError):
    exit_code = 9


class OrphanTeam(HbmvError):
    exit_code = 10


class OrphanPatient(HbmvError):
    exit_code = 11


class CrossNesting(HbmvError):
    exit_code = 12


class DimensionMismatch(HbmvError):
    exit_code = 13


class MissingValues(HbmvError):
    exit_code = 14


class NonPositiveResponse(HbmvError):
    exit_code = 15


class DuplicateUnit(HbmvError):
    exit_code = 16


class BadPredictorIndex(HbmvError):
    exit_code = 17


class InvalidConstraint(HbmvError):
    exit_code = 18


class MissingRandomIntercept(HbmvError):
    exit_code = 19


class ZeroVariance(HbmvError):
    exit_code = 20


class EmptySamples(HbmvError):
    exit_code = 21


class UnknownUnit(HbmvError):
    exit_code = 22


class LayoutMismatch(HbmvError):
    exit_code = 23


class InvalidTruth(HbmvError):
    exit_code = 24


class NumericalBreakdown(HbmvError):
    exit_code = 30

    def __init__(self, block: str, iteration: int | None = None, detail: str = ""):
        self.block = block
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        msg = f"numerical breakdown in block '{block}'{where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SingularDesignWarning(UserWarning):
    """Rank-deficient least-squares start; fixed effects initialized at zero."""


class NonNestedLadderWarning(UserWarning):
    """Ladder models could not be verified as nested; comparison proceeds on DIC alone."""


class NegativeStatisticWarning(UserWarning):
    """Deviance-test statistic came out negative (Monte Carlo noise); clipped to zero."""
