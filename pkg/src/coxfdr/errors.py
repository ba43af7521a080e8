"""Exception hierarchy shared by all coxfdr modules.

Three broad families map onto CLI exit codes: configuration problems
(exit 2), data problems (exit 3), and numerical failures (exit 4).
"""


class CoxFdrError(Exception):
    """Base class for all package errors."""


class ConfigError(CoxFdrError):
    """Invalid configuration, flags, or scenario files."""


class DataError(CoxFdrError):
    """Invalid or inconsistent input data."""


class NumericalError(CoxFdrError):
    """A numerical procedure failed beyond its guard rails."""


# --- covariate moments / knockoff construction -------------------------------

class ConstantColumn(DataError):
    def __init__(self, j):
        self.j = j
        super().__init__(f"column {j} has zero sample variance")


class TooFewRows(DataError):
    def __init__(self, n, minimum=3):
        self.n = n
        super().__init__(f"need at least {minimum} rows, got {n}")


class NotPSD(NumericalError):
    def __init__(self, pivot):
        self.pivot = pivot
        super().__init__(f"conditional covariance has pivot {pivot:.3e} below tolerance")


class DimensionMismatch(DataError):
    pass


# --- partial likelihood / path solver -----------------------------------------

class NoEvents(DataError):
    def __init__(self):
        super().__init__("dataset contains no events (all delta = 0)")


class NonFinite(NumericalError):
    def __init__(self, what="partial likelihood"):
        super().__init__(f"non-finite value in {what} after overflow guarding")


class NotConverged(NumericalError):
    def __init__(self, lam):
        self.lam = lam
        super().__init__(f"solver did not converge at lambda={lam:.6g}")


class FoldWithoutEvents(DataError):
    def __init__(self, fold):
        self.fold = fold
        super().__init__(f"training part of fold {fold} has no events")


# --- filtering ----------------------------------------------------------------

class InvalidQ(ConfigError):
    def __init__(self, q):
        self.q = q
        super().__init__(f"target FDR level must lie in (0, 1), got {q!r}")


class EmptyTruth(DataError):
    def __init__(self):
        super().__init__("true support is empty; true discovery proportion undefined")


# --- simulation bench ----------------------------------------------------------

class CalibrationFailed(NumericalError):
    pass


class ScenarioError(ConfigError):
    pass


class TooManyFailures(NumericalError):
    def __init__(self, failed, total):
        self.failed = failed
        self.total = total
        super().__init__(f"{failed} of {total} replications failed (cap is 5%)")


# --- CSV ingestion --------------------------------------------------------------

class MissingColumn(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"required column {name!r} not found in header")


class NonNumericCell(DataError):
    def __init__(self, row, col):
        self.row = row
        self.col = col
        super().__init__(f"non-numeric value at row {row}, column {col!r}")


class NonPositiveTime(DataError):
    def __init__(self, row):
        self.row = row
        super().__init__(f"time must be positive at row {row}")


class BadEventValue(DataError):
    def __init__(self, row):
        self.row = row
        super().__init__(f"event indicator must be 0 or 1 at row {row}")
