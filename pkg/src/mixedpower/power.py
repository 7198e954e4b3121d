"""Analytic power for co-primary, multiple-primary, and composite analyses.

Test statistics are one-sided latent-scale Wald statistics; under the
alternative the K statistics are jointly normal with the design's outcome
correlation matrix, so every power value is a normal rectangle probability.
All alphas here are one-sided (a two-sided caller halves alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .design import LatentDesign, ResponderRule, rule_intervals
from .exceptions import ValidationError
from .mvn import (
    DEFAULT_ACCURACY,
    MAX_EVALUATIONS,
    CorrelationMatrix,
    RectangleProbability,
    mvn_rectangle,
    std_normal_cdf,
    std_normal_quantile,
)

MAX_MULTIPRIMARY = 12  # inclusion-exclusion has 2^K - 1 terms


@dataclass(frozen=True)
class PowerQuery:
    """One power evaluation: a design at a treatment-arm size and alpha."""

    design: LatentDesign
    n_treatment: int
    alpha: float = 0.025
    allocation: float | None = None  # control:treatment ratio; default design's
    accuracy: float = DEFAULT_ACCURACY
    seed: int = 0
    max_evaluations: int = MAX_EVALUATIONS

    def __post_init__(self):
        if int(self.n_treatment) != self.n_treatment or self.n_treatment < 2:
            raise ValidationError(f"n_treatment must be an integer >= 2, got {self.n_treatment}")
        object.__setattr__(self, "n_treatment", int(self.n_treatment))
        if not 0.0 < self.alpha < 0.5:
            raise ValidationError(f"one-sided alpha must lie in (0, 0.5), got {self.alpha}")
        kappa = self.design.allocation if self.allocation is None else self.allocation
        if not (math.isfinite(kappa) and kappa > 0):
            raise ValidationError(f"allocation ratio must be positive, got {kappa}")
        object.__setattr__(self, "allocation", float(kappa))

    @property
    def effective_scale(self) -> float:
        """sqrt(kappa * n_T / (1 + kappa)): the common test-statistic scale."""
        k = self.allocation
        return math.sqrt(k * self.n_treatment / (1.0 + k))

    @property
    def n_control(self) -> int:
        return int(round(self.allocation * self.n_treatment))


@dataclass(frozen=True)
class PowerEstimate:
    """A power value with integration diagnostics."""

    value: float
    error_estimate: float
    evaluations: int
    converged: bool = True


@dataclass(frozen=True)
class CompositeSummary:
    """Responder-scale effect of a composite endpoint.

    ``delta_star`` is the treatment-vs-control difference in response
    probability; ``sigma_sq`` is the variance factor of the estimator,
    scaled so that var(delta_hat) = sigma_sq * (1/n_T + 1/n_C).
    """

    delta_star: float
    sigma_sq: float

    def __post_init__(self):
        if not math.isfinite(self.delta_star) or not -1.0 <= self.delta_star <= 1.0:
            raise ValidationError(f"delta_star must lie in [-1, 1], got {self.delta_star}")
        if not (math.isfinite(self.sigma_sq) and self.sigma_sq > 0):
            raise ValidationError(f"sigma_sq must be positive, got {self.sigma_sq}")


def critical_shifts(query: PowerQuery) -> np.ndarray:
    """Shifted critical values z_k = z_alpha - theta_k * effective_scale.

    The k-th statistic exceeds z_alpha exactly when a standard normal
    exceeds this shifted value, which is what turns power into a rectangle.
    """
    z_alpha = std_normal_quantile(1.0 - query.alpha)
    return z_alpha - query.design.standardized_effects() * query.effective_scale


def power_individual(query: PowerQuery, outcome) -> float:
    """Exact marginal power of a single outcome (by name or index)."""
    k = query.design.index_of(outcome) if isinstance(outcome, str) else int(outcome)
    if not 0 <= k < query.design.dim:
        raise ValidationError(f"outcome index {k} outside 0..{query.design.dim - 1}")
    return float(std_normal_cdf(-critical_shifts(query)[k]))


def power_coprimary(query: PowerQuery) -> PowerEstimate:
    """P(every statistic exceeds z_alpha): one K-dim rectangle."""
    query.design.require_valid()
    shifts = critical_shifts(query)
    rect = mvn_rectangle(
        shifts,
        np.full(query.design.dim, np.inf),
        query.design.gamma(),
        accuracy=query.accuracy,
        seed=query.seed,
        max_evaluations=query.max_evaluations,
    )
    return PowerEstimate(rect.value, rect.error_estimate, rect.evaluations, rect.converged)


def power_multiprimary(query: PowerQuery) -> PowerEstimate:
    """P(at least one statistic exceeds z_alpha), by inclusion-exclusion.

    Every nonempty subset of outcomes contributes its joint-exceedance
    probability with an alternating sign; subsets of size one and two are
    exact, larger ones use the QMC integrator.  Refuses K > 12 (4095 terms).
    """
    design = query.design.require_valid()
    if design.dim > MAX_MULTIPRIMARY:
        raise ValidationError(
            f"multiple-primary designs support at most {MAX_MULTIPRIMARY} outcomes, got {design.dim}"
        )
    shifts = critical_shifts(query)
    gamma = design.gamma().values
    total = 0.0
    err = 0.0
    evals = 0
    converged = True
    for size in range(1, design.dim + 1):
        sign = 1.0 if size % 2 == 1 else -1.0
        for subset in combinations(range(design.dim), size):
            idx = np.asarray(subset)
            rect = mvn_rectangle(
                shifts[idx],
                np.full(size, np.inf),
                CorrelationMatrix(gamma[np.ix_(idx, idx)]),
                accuracy=query.accuracy,
                seed=query.seed,
                max_evaluations=query.max_evaluations,
            )
            total += sign * rect.value
            err += rect.error_estimate
            evals += rect.evaluations
            converged = converged and rect.converged
    return PowerEstimate(min(max(total, 0.0), 1.0), err, evals, converged)


def response_probability(
    design: LatentDesign,
    arm: str,
    rule: ResponderRule | None = None,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = 0,
) -> RectangleProbability:
    """P(a subject in ``arm`` satisfies every entry of the responder rule).

    Outcomes whose entry never binds are marginalized away before
    integrating, so driver subsets cost what their dimension deserves.
    """
    design.require_valid()
    intervals = rule_intervals(design, rule)
    means = design.latent_means(arm)
    sds = design.latent_sds()
    lower = (np.array([iv[0] for iv in intervals]) - means) / sds
    upper = (np.array([iv[1] for iv in intervals]) - means) / sds
    keep = ~(np.isneginf(lower) & np.isposinf(upper))
    if not np.any(keep):
        return RectangleProbability(1.0, 0.0, 0, True)
    idx = np.flatnonzero(keep)
    gamma = CorrelationMatrix(design.correlation[np.ix_(idx, idx)])
    return mvn_rectangle(lower[idx], upper[idx], gamma, accuracy=accuracy, seed=seed)


@dataclass(frozen=True)
class CompositeEffect:
    """Analytic responder-probability difference with its diagnostics."""

    delta_star: float
    p_treatment: float
    p_control: float
    error_estimate: float
    evaluations: int
    converged: bool


def composite_effect(
    design: LatentDesign,
    rule: ResponderRule | None = None,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = 0,
) -> CompositeEffect:
    """delta* = P(respond | T) - P(respond | C) under the latent model."""
    pt = response_probability(design, "T", rule, accuracy=accuracy, seed=seed)
    pc = response_probability(design, "C", rule, accuracy=accuracy, seed=seed)
    return CompositeEffect(
        pt.value - pc.value,
        pt.value,
        pc.value,
        pt.error_estimate + pc.error_estimate,
        pt.evaluations + pc.evaluations,
        pt.converged and pc.converged,
    )


def power_composite(
    summary: CompositeSummary,
    n_treatment: int,
    alpha: float = 0.025,
    allocation: float = 1.0,
) -> float:
    """Power of the one-sided composite Wald test at the given arm sizes."""
    if n_treatment < 2 or int(n_treatment) != n_treatment:
        raise ValidationError(f"n_treatment must be an integer >= 2, got {n_treatment}")
    if not 0.0 < alpha < 0.5:
        raise ValidationError(f"one-sided alpha must lie in (0, 0.5), got {alpha}")
    if not allocation > 0:
        raise ValidationError(f"allocation ratio must be positive, got {allocation}")
    se = math.sqrt(summary.sigma_sq * (1.0 / n_treatment + 1.0 / (allocation * n_treatment)))
    z_alpha = std_normal_quantile(1.0 - alpha)
    return float(std_normal_cdf(summary.delta_star / se - z_alpha))


def power_binary_standard(
    p_treatment: float,
    p_control: float,
    n_treatment: int,
    alpha: float = 0.025,
    allocation: float = 1.0,
) -> float:
    """Power of the classical two-proportion z test (pooled variance form).

    This is the comparator a binary responder endpoint would be sized with
    if the latent machinery were ignored.
    """
    for label, p in (("p_treatment", p_treatment), ("p_control", p_control)):
        if not 0.0 < p < 1.0:
            raise ValidationError(f"{label} must lie strictly in (0, 1), got {p}")
    if n_treatment < 2 or int(n_treatment) != n_treatment:
        raise ValidationError(f"n_treatment must be an integer >= 2, got {n_treatment}")
    if not 0.0 < alpha < 0.5:
        raise ValidationError(f"one-sided alpha must lie in (0, 0.5), got {alpha}")
    pbar = 0.5 * (p_treatment + p_control)
    se = math.sqrt(pbar * (1.0 - pbar) * (1.0 / n_treatment + 1.0 / (allocation * n_treatment)))
    z_alpha = std_normal_quantile(1.0 - alpha)
    return float(std_normal_cdf((p_treatment - p_control) / se - z_alpha))
