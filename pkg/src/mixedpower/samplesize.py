"""Minimal sample sizes per arm for each analysis strategy.

Closed forms exist for single outcomes and for composite/binary responder
endpoints; co-primary and multiple-primary sizes come from a monotone
integer search (exponential bracketing plus bisection) on the analytic
power, with the decision boundary re-checked at tightened integrator
accuracy.  Ties resolve to the smaller n: the smallest n whose power
reaches the target wins, even at exact equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .design import LatentDesign
from .exceptions import InfeasibleSizeError, NumericalError, ValidationError
from .mvn import std_normal_cdf, std_normal_quantile
from .power import (
    CompositeSummary,
    PowerQuery,
    power_binary_standard,
    power_composite,
    power_coprimary,
    power_multiprimary,
)

SEARCH_CAP = 1_000_000
BOUNDARY_ACCURACY = 1e-7


@dataclass(frozen=True)
class SampleSizeResult:
    """A minimal per-arm size with the power it achieves."""

    n_treatment: int
    n_control: int
    achieved_power: float
    endpoint_type: str
    target_power: float
    alpha: float


def _check_alpha_power(alpha: float, target_power: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise ValidationError(f"one-sided alpha must lie in (0, 0.5), got {alpha}")
    if not 0.0 < target_power < 1.0:
        raise ValidationError(f"target power must lie in (0, 1), got {target_power}")


def _closed_form_n(delta: float, sigma_sq: float, alpha: float, target_power: float,
                   allocation: float) -> int:
    if not delta > 0:
        raise ValidationError(f"a superiority test needs a positive effect, got {delta}")
    if not sigma_sq > 0:
        raise ValidationError(f"variance must be positive, got {sigma_sq}")
    z = std_normal_quantile(1.0 - alpha) + std_normal_quantile(target_power)
    exact = (1.0 + 1.0 / allocation) * sigma_sq * z * z / (delta * delta)
    # round before ceil so a boundary case (power == target exactly) keeps
    # the smaller n instead of being pushed up by the last floating bit
    return max(2, math.ceil(round(exact, 9)))


def _wald_power(delta: float, sigma_sq: float, n: int, alpha: float, allocation: float) -> float:
    se = math.sqrt(sigma_sq * (1.0 / n + 1.0 / (allocation * n)))
    return float(std_normal_cdf(delta / se - std_normal_quantile(1.0 - alpha)))


def _result(n: int, power: float, endpoint: str, target: float, alpha: float,
            allocation: float) -> SampleSizeResult:
    return SampleSizeResult(
        n_treatment=n,
        n_control=int(round(allocation * n)),
        achieved_power=power,
        endpoint_type=endpoint,
        target_power=target,
        alpha=alpha,
    )


def n_individual(delta: float, sigma_sq: float, alpha: float = 0.025,
                 target_power: float = 0.80, allocation: float = 1.0) -> SampleSizeResult:
    """Two-sample one-sided z test size for a single (continuous-scale) effect."""
    _check_alpha_power(alpha, target_power)
    if not allocation > 0:
        raise ValidationError(f"allocation ratio must be positive, got {allocation}")
    n = _closed_form_n(delta, sigma_sq, alpha, target_power, allocation)
    while n > 2 and _wald_power(delta, sigma_sq, n - 1, alpha, allocation) >= target_power:
        n -= 1
    while _wald_power(delta, sigma_sq, n, alpha, allocation) < target_power:
        n += 1
    return _result(n, _wald_power(delta, sigma_sq, n, alpha, allocation),
                   "individual", target_power, alpha, allocation)


def n_individual_for(design: LatentDesign, outcome, alpha: float = 0.025,
                     target_power: float = 0.80, allocation: float | None = None) -> SampleSizeResult:
    """Size for one of a design's outcomes (standardized latent effect)."""
    design.require_valid()
    k = design.index_of(outcome) if isinstance(outcome, str) else int(outcome)
    kappa = design.allocation if allocation is None else allocation
    theta = float(design.standardized_effects()[k])
    return n_individual(theta, 1.0, alpha=alpha, target_power=target_power, allocation=kappa)


def n_composite(summary: CompositeSummary, alpha: float = 0.025, target_power: float = 0.80,
                allocation: float = 1.0) -> SampleSizeResult:
    """Closed-form size for the composite responder Wald test."""
    _check_alpha_power(alpha, target_power)
    if not allocation > 0:
        raise ValidationError(f"allocation ratio must be positive, got {allocation}")
    n = _closed_form_n(summary.delta_star, summary.sigma_sq, alpha, target_power, allocation)
    while n > 2 and power_composite(summary, n - 1, alpha, allocation) >= target_power:
        n -= 1
    while power_composite(summary, n, alpha, allocation) < target_power:
        n += 1
    return _result(n, power_composite(summary, n, alpha, allocation),
                   "composite", target_power, alpha, allocation)


def n_binary_standard(p_treatment: float, p_control: float, alpha: float = 0.025,
                      target_power: float = 0.80, allocation: float = 1.0) -> SampleSizeResult:
    """Classical two-proportion comparator size (pooled variance 2 pbar qbar)."""
    _check_alpha_power(alpha, target_power)
    for label, p in (("p_treatment", p_treatment), ("p_control", p_control)):
        if not 0.0 < p < 1.0:
            raise ValidationError(f"{label} must lie strictly in (0, 1), got {p}")
    if not p_treatment > p_control:
        raise ValidationError("p_treatment must exceed p_control for a superiority size")
    pbar = 0.5 * (p_treatment + p_control)
    n = _closed_form_n(p_treatment - p_control, pbar * (1.0 - pbar), alpha, target_power, allocation)

    def pw(m):
        return power_binary_standard(p_treatment, p_control, m, alpha, allocation)

    while n > 2 and pw(n - 1) >= target_power:
        n -= 1
    while pw(n) < target_power:
        n += 1
    return _result(n, pw(n), "binary_standard", target_power, alpha, allocation)


def _minimal_n(power_fn, tight_fn, target: float, cap: int = SEARCH_CAP) -> int:
    """Smallest integer n with power_fn(n) >= target, assuming monotone power.

    ``tight_fn`` re-evaluates at tightened accuracy; the final boundary is
    decided by it so integrator noise at the coarse accuracy cannot move n.
    """
    if power_fn(2) >= target:
        n = 2
    else:
        lo, hi = 2, 4
        while (p_hi := power_fn(hi)) < target:
            if hi >= cap:
                raise InfeasibleSizeError(cap, target, p_hi)
            lo, hi = hi, min(2 * hi, cap)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if power_fn(mid) >= target:
                hi = mid
            else:
                lo = mid
        n = hi
    steps = 0
    while n > 2 and tight_fn(n - 1) >= target:
        n -= 1
        steps += 1
        if steps > 128:
            raise NumericalError("sample-size boundary did not stabilize (walking down)")
    while tight_fn(n) < target:
        n += 1
        steps += 1
        if n > cap:
            raise InfeasibleSizeError(cap, target, tight_fn(cap))
        if steps > 128:
            raise NumericalError("sample-size boundary did not stabilize (walking up)")
    return n


def _require_positive_effects(design: LatentDesign, what: str) -> None:
    effects = design.standardized_effects()
    bad = [design.names[i] for i in range(design.dim) if effects[i] <= 0]
    if bad:
        raise ValidationError(
            f"{what} search assumes every outcome favors treatment; "
            f"non-positive standardized effects on: {', '.join(bad)}"
        )


def n_coprimary(design: LatentDesign, alpha: float = 0.025, target_power: float = 0.80,
                allocation: float | None = None, accuracy: float = 1e-6,
                seed: int = 0, cap: int = SEARCH_CAP) -> SampleSizeResult:
    """Smallest per-arm n where all outcomes reject jointly with target power."""
    design.require_valid()
    _check_alpha_power(alpha, target_power)
    _require_positive_effects(design, "co-primary")
    kappa = design.allocation if allocation is None else allocation

    def pw(n, acc):
        q = PowerQuery(design, n, alpha=alpha, allocation=kappa, accuracy=acc, seed=seed)
        return power_coprimary(q).value

    n = _minimal_n(lambda m: pw(m, accuracy), lambda m: pw(m, BOUNDARY_ACCURACY), target_power, cap)
    return _result(n, pw(n, BOUNDARY_ACCURACY), "coprimary", target_power, alpha, kappa)


def n_multiprimary(design: LatentDesign, alpha: float = 0.025, target_power: float = 0.80,
                   allocation: float | None = None, accuracy: float = 1e-6,
                   seed: int = 0, cap: int = SEARCH_CAP) -> SampleSizeResult:
    """Smallest per-arm n where at least one outcome rejects with target power."""
    design.require_valid()
    _check_alpha_power(alpha, target_power)
    _require_positive_effects(design, "multiple-primary")
    kappa = design.allocation if allocation is None else allocation

    def pw(n, acc):
        q = PowerQuery(design, n, alpha=alpha, allocation=kappa, accuracy=acc, seed=seed)
        return power_multiprimary(q).value

    n = _minimal_n(lambda m: pw(m, accuracy), lambda m: pw(m, BOUNDARY_ACCURACY), target_power, cap)
    return _result(n, pw(n, BOUNDARY_ACCURACY), "multiprimary", target_power, alpha, kappa)
