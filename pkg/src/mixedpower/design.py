"""Latent-Gaussian endpoint designs.

A design holds K outcomes in the canonical order (continuous, then ordinal,
then binary), the latent correlation matrix, ordinal cut points, an optional
responder rule, and the control:treatment allocation ratio.  Discrete
outcomes live on a unit-variance latent scale; their category boundaries are
the cut points (binary outcomes have the single fixed cut 0).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import DesignError, ValidationError
from .mvn import CorrelationMatrix, std_normal_quantile

KINDS = ("continuous", "ordinal", "binary")
_KIND_RANK = {kind: i for i, kind in enumerate(KINDS)}
DIRECTIONS = ("above", "below")


@dataclass(frozen=True)
class OutcomeSpec:
    """One endpoint: raw scale if continuous, latent scale if discrete.

    ``cuts`` are the ordered category boundaries of a discrete outcome
    (binary outcomes always carry the fixed cut 0).  ``response_band`` is the
    marginal response definition of a discrete outcome as (cut index,
    direction): e.g. (1, "above") means "category at or above cut 1".
    """

    name: str
    kind: str
    mean_treatment: float
    mean_control: float
    sd: float | None = None
    levels: int | None = None
    cuts: tuple[float, ...] | None = None
    response_band: tuple[int, str] | None = None

    def with_cuts(self, cuts) -> "OutcomeSpec":
        return replace(self, cuts=tuple(float(c) for c in cuts))

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("ordinal", "binary")

    @property
    def n_categories(self) -> int | None:
        if self.kind == "binary":
            return 2
        return self.levels

    def latent_sd(self) -> float:
        return 1.0 if self.is_discrete else float(self.sd)


@dataclass(frozen=True)
class OrdinalThresholds:
    """Validated strictly-increasing finite cut points."""

    cuts: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if not cuts:
            raise ValidationError("at least one cut point is required")
        if not all(math.isfinite(c) for c in cuts):
            raise ValidationError("cut points must be finite")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValidationError(f"cut points must be strictly increasing; got {cuts}")
        object.__setattr__(self, "cuts", cuts)

    @classmethod
    def from_probs(cls, probs) -> "OrdinalThresholds":
        """Cuts matching given category probabilities for a zero-mean latent."""
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ValidationError("need at least two category probabilities")
        if np.any(p <= 0.0):
            raise ValidationError("category probabilities must all be positive")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValidationError(f"category probabilities sum to {float(p.sum())}, not 1")
        cum = np.cumsum(p)[:-1]
        return cls(tuple(std_normal_quantile(c) for c in cum))


@dataclass(frozen=True)
class RuleEntry:
    """One outcome's responder threshold.

    Continuous outcomes use ``threshold`` on the raw scale; discrete outcomes
    use ``cut`` as a cut index (0 .. levels, where 0/'above' or levels/'below'
    never binds, which is how non-driver outcomes are expressed).
    """

    outcome: str
    direction: str
    threshold: float | None = None
    cut: int | None = None


@dataclass(frozen=True)
class ResponderRule:
    """Conjunction rule: a subject responds when every entry is satisfied."""

    entries: tuple[RuleEntry, ...]

    def entry_for(self, name: str) -> RuleEntry | None:
        for entry in self.entries:
            if entry.outcome == name:
                return entry
        return None


@dataclass(frozen=True)
class LatentDesign:
    """A full endpoint design in canonical outcome order."""

    outcomes: tuple[OutcomeSpec, ...]
    correlation: np.ndarray
    responder_rule: ResponderRule | None = None
    allocation: float = 1.0
    permutation: tuple[int, ...] = field(default=())

    def __post_init__(self):
        corr = np.array(self.correlation, dtype=np.float64)
        corr.setflags(write=False)
        object.__setattr__(self, "correlation", corr)
        if not self.permutation:
            object.__setattr__(self, "permutation", tuple(range(len(self.outcomes))))

    # -- structure ---------------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.outcomes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.outcomes)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(o.kind for o in self.outcomes)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"no outcome named {name!r}; have {list(self.names)}") from None

    @property
    def n_continuous(self) -> int:
        return sum(k == "continuous" for k in self.kinds)

    @property
    def n_discrete(self) -> int:
        return self.dim - self.n_continuous

    # -- model pieces ------------------------------------------------------
    def latent_means(self, arm: str) -> np.ndarray:
        if arm not in ("T", "C"):
            raise ValidationError(f"arm must be 'T' or 'C', got {arm!r}")
        if arm == "T":
            return np.array([o.mean_treatment for o in self.outcomes])
        return np.array([o.mean_control for o in self.outcomes])

    def latent_sds(self) -> np.ndarray:
        return np.array([o.latent_sd() for o in self.outcomes])

    def standardized_effects(self) -> np.ndarray:
        """(mu_T - mu_C) / sd per outcome; discrete outcomes are unit-scale."""
        return (self.latent_means("T") - self.latent_means("C")) / self.latent_sds()

    def cuts_of(self, k: int) -> tuple[float, ...]:
        o = self.outcomes[k]
        if not o.is_discrete:
            raise ValidationError(f"outcome {o.name!r} is continuous and has no cuts")
        return o.cuts

    def gamma(self) -> CorrelationMatrix:
        """The latent outcome correlation matrix."""
        return CorrelationMatrix(self.correlation)

    def covariance(self) -> np.ndarray:
        """Latent covariance: correlation scaled by per-outcome SDs."""
        s = self.latent_sds()
        return self.correlation * np.outer(s, s)

    def band_interval(self, k: int) -> tuple[float, float]:
        """Latent interval of outcome k's marginal response band."""
        o = self.outcomes[k]
        if not o.is_discrete:
            raise ValidationError(f"outcome {o.name!r} has no response band")
        band = o.response_band
        if band is None:
            raise ValidationError(f"outcome {o.name!r} has no response band")
        return cut_interval(o.cuts, int(band[0]), band[1])

    def design_hash(self) -> str:
        payload = json.dumps(design_to_dict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def require_valid(self) -> "LatentDesign":
        problems = validate(self)
        if problems:
            raise DesignError(problems)
        return self


def cut_interval(cuts, index: int, direction: str) -> tuple[float, float]:
    """Latent interval selected by a cut index and direction.

    With cuts (t_1..t_w): 'above' j means the region [t_j, inf) and 'below' j
    means (-inf, t_j); j=0 'above' and j=w+1 'below' cover everything.
    """
    w = len(cuts)
    if direction not in DIRECTIONS:
        raise ValidationError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if not 0 <= index <= w + 1:
        raise ValidationError(f"cut index {index} outside 0..{w + 1} for {w} cuts")
    extended = (-math.inf,) + tuple(cuts) + (math.inf,)
    if direction == "above":
        return (extended[index], math.inf)
    return (-math.inf, extended[index])


def latent_effect_from_proportions(p_treatment: float, p_control: float) -> float:
    """Latent standardized effect reproducing two response proportions."""
    return std_normal_quantile(p_treatment) - std_normal_quantile(p_control)


def latent_mean_from_proportion(p: float, cut: float = 0.0) -> float:
    """Latent mean placing response probability ``p`` above ``cut``."""
    return cut + std_normal_quantile(p)


def build_design(
    outcomes,
    correlations,
    responder_rule: ResponderRule | None = None,
    allocation: float = 1.0,
) -> LatentDesign:
    """Assemble a design, canonicalizing outcome order (continuous, ordinal,
    binary) and permuting the correlation inputs to match.

    ``correlations`` is either a full K x K matrix or the row-major upper
    triangle, given in the *input* outcome order.
    """
    outcomes = list(outcomes)
    dim = len(outcomes)
    if dim == 0:
        raise ValidationError("a design needs at least one outcome")
    corr = np.asarray(correlations, dtype=np.float64)
    if corr.ndim == 1:
        corr = CorrelationMatrix.from_upper_triangle(dim, corr).values.copy()
    elif corr.shape != (dim, dim):
        raise ValidationError(f"correlation shape {corr.shape} does not match {dim} outcomes")

    order = sorted(range(dim), key=lambda i: _KIND_RANK.get(outcomes[i].kind, 99))
    outcomes = [_normalize_outcome(outcomes[i]) for i in order]
    corr = corr[np.ix_(order, order)]
    return LatentDesign(
        outcomes=tuple(outcomes),
        correlation=corr,
        responder_rule=responder_rule,
        allocation=float(allocation),
        permutation=tuple(order),
    )


def _normalize_outcome(o: OutcomeSpec) -> OutcomeSpec:
    if o.kind == "binary":
        if o.cuts is not None and tuple(o.cuts) != (0.0,):
            raise ValidationError(f"binary outcome {o.name!r} must keep its cut fixed at 0")
        o = replace(o, cuts=(0.0,), response_band=o.response_band or (1, "above"))
    elif o.kind == "ordinal":
        if o.cuts is not None:
            o = replace(o, cuts=tuple(float(c) for c in o.cuts))
        if o.response_band is None and o.levels:
            o = replace(o, response_band=(int(o.levels) - 1, "above"))
    return o


def validate(design: LatentDesign) -> list[str]:
    """All invariant violations, as readable strings; empty means usable."""
    problems: list[str] = []
    if design.dim == 0:
        return ["design has no outcomes"]
    names = design.names
    if len(set(names)) != len(names):
        problems.append("outcome names are not unique")
    ranks = [_KIND_RANK.get(k) for k in design.kinds]
    if None in ranks:
        problems.append(f"unknown outcome kind present; kinds must be one of {KINDS}")
        return problems
    if ranks != sorted(ranks):
        problems.append("outcomes are not in canonical order (continuous, ordinal, binary)")

    for o in design.outcomes:
        where = f"outcome {o.name!r}"
        if not (math.isfinite(o.mean_treatment) and math.isfinite(o.mean_control)):
            problems.append(f"{where}: means must be finite")
        if o.kind == "continuous":
            if o.sd is None or not math.isfinite(o.sd) or o.sd <= 0:
                problems.append(f"{where}: continuous outcomes need a finite sd > 0")
            if o.cuts is not None:
                problems.append(f"{where}: continuous outcomes cannot have cuts")
        elif o.kind == "ordinal":
            if o.levels is None or int(o.levels) < 3:
                problems.append(f"{where}: ordinal outcomes need at least 3 levels")
            elif o.cuts is None:
                problems.append(f"{where}: ordinal outcomes need cut points")
            else:
                if len(o.cuts) != int(o.levels) - 1:
                    problems.append(
                        f"{where}: {int(o.levels)} levels require {int(o.levels) - 1} cuts,"
                        f" got {len(o.cuts)}"
                    )
                try:
                    OrdinalThresholds(o.cuts)
                except ValidationError as exc:
                    problems.append(f"{where}: {exc}")
        elif o.kind == "binary":
            if o.cuts != (0.0,):
                problems.append(f"{where}: binary outcomes carry the fixed cut 0")
        if o.is_discrete and o.response_band is not None:
            idx, direction = o.response_band
            w = len(o.cuts or ())
            if direction not in DIRECTIONS or not 1 <= int(idx) <= w:
                problems.append(f"{where}: response band {o.response_band} is not a valid band")

    corr = design.correlation
    if corr.shape != (design.dim, design.dim):
        problems.append(f"correlation shape {corr.shape} does not match {design.dim} outcomes")
        return problems
    if not np.all(np.isfinite(corr)):
        problems.append("correlation matrix has non-finite entries")
        return problems
    if not np.allclose(corr, corr.T, atol=1e-12):
        problems.append("correlation matrix is not symmetric")
    if not np.allclose(np.diagonal(corr), 1.0, atol=1e-12):
        problems.append("correlation matrix diagonal must be 1")
    if np.any(np.abs(corr) > 1 + 1e-12):
        problems.append("correlations must lie in [-1, 1]")
    else:
        smallest = float(np.linalg.eigvalsh(0.5 * (corr + corr.T))[0])
        if smallest <= 1e-10:
            problems.append(
                f"correlation matrix is not positive definite (smallest eigenvalue {smallest:.3g})"
            )

    if not (math.isfinite(design.allocation) and design.allocation > 0):
        problems.append(f"allocation ratio must be positive and finite, got {design.allocation}")

    if design.responder_rule is not None:
        problems.extend(_validate_rule(design, design.responder_rule))
    return problems


def _validate_rule(design: LatentDesign, rule: ResponderRule) -> list[str]:
    problems = []
    seen = set()
    for entry in rule.entries:
        where = f"rule entry for {entry.outcome!r}"
        if entry.outcome not in design.names:
            problems.append(f"{where}: no such outcome")
            continue
        if entry.outcome in seen:
            problems.append(f"{where}: duplicated")
        seen.add(entry.outcome)
        o = design.outcomes[design.index_of(entry.outcome)]
        if entry.direction not in DIRECTIONS:
            problems.append(f"{where}: direction must be one of {DIRECTIONS}")
        if o.is_discrete:
            if entry.cut is None or entry.threshold is not None:
                problems.append(f"{where}: discrete outcomes take a cut index, not a threshold")
            elif not 0 <= int(entry.cut) <= len(o.cuts or ()) + 1:
                problems.append(
                    f"{where}: cut index {entry.cut} outside 0..{len(o.cuts or ()) + 1}"
                )
        else:
            if entry.threshold is None or entry.cut is not None:
                problems.append(f"{where}: continuous outcomes take a threshold, not a cut index")
            elif math.isnan(entry.threshold):
                problems.append(f"{where}: threshold is NaN")
    missing = set(design.names) - seen
    if missing:
        problems.append(
            "rule is missing entries for outcomes: " + ", ".join(sorted(missing))
            + " (use a never-binding entry, e.g. cut 0 'above' or threshold -inf, "
            "to leave an outcome out of the composite)"
        )
    return problems


def rule_intervals(design: LatentDesign, rule: ResponderRule | None = None):
    """Per-outcome latent intervals of the responder region, design order.

    Continuous intervals are on the raw outcome scale; discrete ones on the
    unit latent scale.
    """
    rule = rule or design.responder_rule
    if rule is None:
        raise ValidationError("design has no responder rule")
    intervals = []
    for o in design.outcomes:
        entry = rule.entry_for(o.name)
        if entry is None:
            raise ValidationError(f"responder rule has no entry for outcome {o.name!r}")
        if o.is_discrete:
            intervals.append(cut_interval(o.cuts, int(entry.cut), entry.direction))
        else:
            eta = float(entry.threshold)
            intervals.append((eta, math.inf) if entry.direction == "above" else (-math.inf, eta))
    return intervals


# -- JSON design files -------------------------------------------------------

def design_to_dict(design: LatentDesign) -> dict:
    outcomes = []
    for o in design.outcomes:
        d = {
            "name": o.name,
            "kind": o.kind,
            "mean_treatment": o.mean_treatment,
            "mean_control": o.mean_control,
        }
        if o.kind == "continuous":
            d["sd"] = o.sd
        if o.kind == "ordinal":
            d["levels"] = o.levels
            d["cuts"] = list(o.cuts or ())
        if o.is_discrete and o.response_band is not None:
            d["response_band"] = {"cut": int(o.response_band[0]), "direction": o.response_band[1]}
        outcomes.append(d)
    rows, cols = np.triu_indices(design.dim, k=1)
    out = {
        "outcomes": outcomes,
        "correlations": [float(design.correlation[i, j]) for i, j in zip(rows, cols)],
        "allocation": design.allocation,
    }
    if design.responder_rule is not None:
        entries = []
        for e in design.responder_rule.entries:
            d = {"outcome": e.outcome, "direction": e.direction}
            if e.threshold is not None:
                d["threshold"] = e.threshold
            if e.cut is not None:
                d["cut"] = int(e.cut)
            entries.append(d)
        out["responder_rule"] = entries
    return out


def design_from_dict(payload: dict) -> LatentDesign:
    if not isinstance(payload, dict) or "outcomes" not in payload:
        raise ValidationError("design file must be an object with an 'outcomes' list")
    outcomes = []
    for item in payload["outcomes"]:
        try:
            band = item.get("response_band")
            if band is not None:
                band = (int(band["cut"]), str(band["direction"]))
            outcomes.append(
                OutcomeSpec(
                    name=str(item["name"]),
                    kind=str(item["kind"]),
                    mean_treatment=float(item["mean_treatment"]),
                    mean_control=float(item["mean_control"]),
                    sd=None if item.get("sd") is None else float(item["sd"]),
                    levels=None if item.get("levels") is None else int(item["levels"]),
                    cuts=None if item.get("cuts") is None else tuple(float(c) for c in item["cuts"]),
                    response_band=band,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad outcome entry {item!r}: {exc}") from None
    if "correlations" not in payload:
        raise ValidationError("design file needs a 'correlations' entry")
    rule = None
    if payload.get("responder_rule") is not None:
        entries = []
        for item in payload["responder_rule"]:
            try:
                entries.append(
                    RuleEntry(
                        outcome=str(item["outcome"]),
                        direction=str(item["direction"]),
                        threshold=None if item.get("threshold") is None else float(item["threshold"]),
                        cut=None if item.get("cut") is None else int(item["cut"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"bad rule entry {item!r}: {exc}") from None
        rule = ResponderRule(tuple(entries))
    return build_design(
        outcomes,
        payload["correlations"],
        responder_rule=rule,
        allocation=float(payload.get("allocation", 1.0)),
    )


def load_design(path) -> LatentDesign:
    text = Path(path).read_text()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return design_from_dict(payload)


def save_design(design: LatentDesign, path) -> None:
    Path(path).write_text(json.dumps(design_to_dict(design), indent=2) + "\n")


def _fixture_path(name: str) -> Path:
    return Path(__file__).parent / "fixtures" / name


def load_fixture(name: str) -> LatentDesign:
    """Load one of the packaged example designs by file name."""
    path = _fixture_path(name if name.endswith(".json") else name + ".json")
    if not path.exists():
        names = sorted(p.stem for p in _fixture_path("").glob("*.json"))
        raise ValidationError(f"no fixture {name!r}; available: {names}")
    return load_design(path)


def lupus_trial_design() -> LatentDesign:
    """The bundled four-endpoint lupus trial example."""
    return load_fixture("lupus_trial")


def composite_verification_design() -> LatentDesign:
    """Four-endpoint design calibrated for composite-power verification.

    Same outcome structure and correlations as the lupus example, with all
    standardized effects doubled and responder thresholds placed so the true
    composite effect is 0.200 and the model-implied variance unit is 0.050:
    the configuration whose planning formula gives n = 20 per arm at 88%
    power (one-sided alpha 0.05), used by the simulation checks.
    """
    return load_fixture("composite_verification")


def build_grid_cell(
    drivers: tuple[str, ...],
    correlation: float,
    effect: float,
    placement: float,
) -> LatentDesign:
    """Three-outcome design family for the composite power-verification grid.

    One continuous (y1), one five-level ordinal (y2), and one binary (y3)
    outcome share a common latent treatment effect ``effect`` and a common
    pairwise latent ``correlation``.  ``placement`` positions every response
    band: the continuous threshold sits at ``placement``, the ordinal cuts at
    ``placement + (-0.8, 0, 0.8, 1.6)`` with the band at the second cut, and
    the binary control mean at ``-placement`` with its band at the fixed cut,
    so each driver's control response probability is Phi(-placement).
    ``drivers`` lists the outcomes whose band binds in the responder rule
    (subset of y1/y2/y3); the others get never-binding entries.  Calibrating
    (effect, placement) tunes the composite effect and its variance unit
    independently.
    """
    c = float(placement)
    d = float(effect)
    rho = float(correlation)
    cuts = (c - 0.8, c, c + 0.8, c + 1.6)
    outcomes = (
        OutcomeSpec(name="y1", kind="continuous", mean_treatment=d, mean_control=0.0, sd=1.0),
        OutcomeSpec(
            name="y2", kind="ordinal", mean_treatment=d, mean_control=0.0,
            levels=5, cuts=cuts, response_band=(2, "above"),
        ),
        OutcomeSpec(
            name="y3", kind="binary", mean_treatment=d - c, mean_control=-c,
            cuts=(0.0,), response_band=(1, "above"),
        ),
    )
    corr = np.eye(3)
    corr[np.triu_indices(3, 1)] = rho
    corr[np.tril_indices(3, -1)] = rho
    entries = (
        RuleEntry(
            outcome="y1", direction="above",
            threshold=(c if "y1" in drivers else -math.inf), cut=None,
        ),
        RuleEntry(outcome="y2", direction="above", threshold=None, cut=(2 if "y2" in drivers else 0)),
        RuleEntry(outcome="y3", direction="above", threshold=None, cut=(1 if "y3" in drivers else 0)),
    )
    return LatentDesign(
        outcomes=outcomes, correlation=corr, responder_rule=ResponderRule(entries=entries)
    )
