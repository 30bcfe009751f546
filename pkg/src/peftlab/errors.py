"""Exception taxonomy. Every error carries a machine-readable category string
so the CLI can report failures uniformly."""


class PeftLabError(Exception):
    category = "error"


class DimensionError(PeftLabError):
    category = "dimension"


class NonFiniteError(PeftLabError):
    category = "non_finite"


class ConfigError(PeftLabError):
    category = "config"


class SpecError(PeftLabError):
    """Malformed PEFT placement spec (duplicate methods, bad layer cover)."""

    category = "spec"


class ContractError(PeftLabError):
    """An operation was called outside its contract (non-scalar backward,
    consumed tape, too few ensemble members, ...)."""

    category = "contract"


class InfeasibleTargetError(PeftLabError):
    """CTC target cannot be emitted within the given number of frames."""

    category = "infeasible_target"


class DataError(PeftLabError):
    category = "data"


class MetricError(PeftLabError):
    category = "metric"


class UndefinedTestError(PeftLabError):
    """Significance test has no defined value (e.g. McNemar with b + c = 0)."""

    category = "undefined_test"


class SearchFailureError(PeftLabError):
    """Training or search diverged. Carries the step index where loss left
    the finite range."""

    category = "search_failure"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
