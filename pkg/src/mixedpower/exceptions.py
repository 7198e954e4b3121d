"""Exception hierarchy shared across the package.

Two broad families matter to callers (and to the CLI's exit codes):
``ValidationError`` for bad inputs and ``NumericalError`` for computations
that could not be completed honestly.
"""


class MixedPowerError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(MixedPowerError, ValueError):
    """Invalid user input: designs, parameters, files, rules."""


class DesignError(ValidationError):
    """A latent design violates its invariants."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("invalid design: " + "; ".join(self.violations))


class NumericalError(MixedPowerError, RuntimeError):
    """A numerical routine failed or refused to return a garbage value."""


class NotPositiveDefiniteError(NumericalError):
    """Matrix factorization failed; carries the offending eigenvalue."""

    def __init__(self, smallest_eigenvalue, what="matrix"):
        self.smallest_eigenvalue = float(smallest_eigenvalue)
        super().__init__(
            f"{what} is not positive definite "
            f"(smallest eigenvalue {self.smallest_eigenvalue:.6g})"
        )


class InfeasibleSizeError(NumericalError):
    """No sample size up to the cap reaches the target power."""

    def __init__(self, cap, target_power, achieved):
        self.cap = int(cap)
        self.target_power = float(target_power)
        self.achieved = float(achieved)
        super().__init__(
            f"effect too small: power {achieved:.6g} at the search cap n={cap} "
            f"is below the target {target_power:.6g}"
        )


class FitError(NumericalError):
    """Latent-model fitting failed for a dataset."""


class ConvergenceError(NumericalError):
    """Too many replications failed for the estimate to be trusted."""
