"""Exception types shared across the package."""


class DrateError(Exception):
    """Base class for all library errors."""


class DataError(DrateError):
    """Raised when a dataset cannot be loaded or fails validation."""


class ConfigError(DrateError):
    """Raised for invalid configuration (CLI exit code 2)."""


class FitError(DrateError):
    """Base class for nuisance-fitting failures (CLI exit code 3)."""


class DegenerateTargetError(FitError):
    """Logistic target is all 0 or all 1; no interior maximizer exists."""


class SeparationError(FitError):
    """Logistic likelihood has no finite maximizer (complete separation)."""


class RankDeficiencyError(FitError):
    """Design matrix does not have full column rank."""


class EmptyArmError(FitError):
    """The treated or control arm required by a fit is empty or too small."""


class PerturbationRangeError(DrateError):
    """A locally misspecified propensity left (0, 1) on the evaluation domain."""


class NonFiniteNuisanceError(DrateError):
    """A nuisance function returned a non-finite value at a sample point."""
