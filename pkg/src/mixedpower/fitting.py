"""Maximum-likelihood fitting of the latent mixed-outcome model.

The model family matches the generative one: continuous outcomes are jointly
Gaussian with free means per arm and a common SD; each discrete outcome is a
thresholded unit-variance Gaussian.  Identification fixes every binary cut at
0 (both arm means free) and anchors every ordinal control mean at 0 (free
cuts plus a treatment shift); a generative design with a nonzero ordinal
control mean mu corresponds to the anchored parameters (cuts - mu,
effect = mean_T - mu), and the responder functionals are invariant to that
shift.

Estimation is two-stage -- marginal moments/probit fits, then pairwise
correlations (Pearson, polyserial, polychoric by pair type) -- followed by an
optional joint quasi-Newton polish of the full likelihood (on by default).
Each observation's likelihood is the Gaussian density of its continuous
coordinates times the conditional probability of its observed discrete
categories, a rectangle of the conditional multivariate normal.

Categories empty in the pooled sample get half a pseudo-observation
(split across arms by size) so their cuts stay finite and the observed
information stays invertible; corrections are counted in the diagnostics
and vanish asymptotically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize, minimize_scalar
from scipy.special import ndtr, ndtri

from .design import LatentDesign, ResponderRule, cut_interval
from .exceptions import FitError, NumericalError, ValidationError
from .mvn import (
    MAX_EVALUATIONS,
    CorrelationMatrix,
    bvn_rectangle,
    mvn_rectangle,
    rectangle_order,
    std_normal_quantile,
)
from .simulate import TrialDataset

__all__ = [
    "ParameterLayout",
    "ParameterVector",
    "FitResult",
    "DeltaMethod",
    "fit",
    "loglik_function",
    "observed_information",
    "bootstrap_covariance",
    "delta_star",
    "delta_variance",
    "wald_test",
    "params_from_design",
    "fitted_design",
]

_PENALTY = 1e10
_TINY_P = 1e-300
_RHO_BOUND = 0.995
_INFO_STEP = 1e-4
_GRAD_STEP = 1e-5
_DELTA_SEED = 101
_DELTA_BUDGET = 12 * 1024  # fixed lattice budget: keeps finite differences on common points
_MIN_CORR_EIGENVALUE = 1e-6


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterLayout:
    """Order and naming of the free parameters for one model structure.

    Per continuous outcome: mean_T, mean_C, sd.  Per ordinal outcome: the
    treatment shift mean_T and the cuts (control mean anchored at 0).  Per
    binary outcome: mean_T and mean_C (cut fixed at 0).  Then the upper
    triangle of the outcome correlation matrix, row-major.
    """

    structure: LatentDesign
    terms: tuple[tuple, ...]
    names: tuple[str, ...]

    @classmethod
    def for_structure(cls, structure: LatentDesign) -> "ParameterLayout":
        terms: list[tuple] = []
        names: list[str] = []
        for k, o in enumerate(structure.outcomes):
            if o.kind == "continuous":
                terms += [("mean_T", k), ("mean_C", k), ("sd", k)]
                names += [f"mean_T[{o.name}]", f"mean_C[{o.name}]", f"sd[{o.name}]"]
            elif o.kind == "ordinal":
                terms.append(("mean_T", k))
                names.append(f"mean_T[{o.name}]")
                for j in range(1, len(o.cuts) + 1):
                    terms.append(("cut", k, j))
                    names.append(f"cut[{o.name},{j}]")
            else:
                terms += [("mean_T", k), ("mean_C", k)]
                names += [f"mean_T[{o.name}]", f"mean_C[{o.name}]"]
        for a, b in itertools.combinations(range(structure.dim), 2):
            terms.append(("rho", a, b))
            names.append(f"rho[{structure.outcomes[a].name},{structure.outcomes[b].name}]")
        return cls(structure=structure, terms=tuple(terms), names=tuple(names))

    @property
    def size(self) -> int:
        return len(self.terms)

    def index(self, term: tuple) -> int:
        try:
            return self.terms.index(term)
        except ValueError:
            raise ValidationError(f"no parameter {term!r} in this layout") from None

    @cached_property
    def _groups(self) -> dict:
        """Vectorized index arrays for the hot accessors."""
        by_kind: dict = {kind: ([], []) for kind in ("mean_T", "mean_C", "sd")}
        rho_pos, rho_ab = [], []
        cut_pos: dict[int, list[int]] = {}
        for i, t in enumerate(self.terms):
            if t[0] in by_kind:
                by_kind[t[0]][0].append(i)
                by_kind[t[0]][1].append(t[1])
            elif t[0] == "cut":
                cut_pos.setdefault(t[1], []).append(i)
            else:
                rho_pos.append(i)
                rho_ab.append((t[1], t[2]))
        out = {
            kind: (np.asarray(pos, dtype=np.intp), np.asarray(ks, dtype=np.intp))
            for kind, (pos, ks) in by_kind.items()
        }
        out["rho"] = (np.asarray(rho_pos, dtype=np.intp),
                      np.asarray(rho_ab, dtype=np.intp).reshape(-1, 2))
        out["cuts"] = {k: np.asarray(pos, dtype=np.intp) for k, pos in cut_pos.items()}
        return out


@dataclass(frozen=True)
class ParameterVector:
    """A point in the natural parameter space, tied to its layout."""

    layout: ParameterLayout
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        if v.size != self.layout.size:
            raise ValidationError(
                f"{v.size} values for a layout of {self.layout.size} parameters"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, key):
        if isinstance(key, str):
            return float(self.values[self.layout.names.index(key)])
        return float(self.values[self.layout.index(key)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.layout.names, map(float, self.values)))

    def means(self, arm: str) -> np.ndarray:
        if arm not in ("T", "C"):
            raise ValidationError(f"arm must be 'T' or 'C', got {arm!r}")
        groups = self.layout._groups
        pos, ks = groups["mean_T" if arm == "T" else "mean_C"]
        out = np.zeros(self.layout.structure.dim)
        out[ks] = self.values[pos]
        return out  # ordinal control means stay at the anchor 0

    def sds(self) -> np.ndarray:
        pos, ks = self.layout._groups["sd"]
        out = np.ones(self.layout.structure.dim)
        out[ks] = self.values[pos]
        return out

    def cuts(self, k: int) -> tuple[float, ...]:
        o = self.layout.structure.outcomes[k]
        if o.kind == "binary":
            return (0.0,)
        if o.kind == "ordinal":
            return tuple(float(v) for v in self.values[self.layout._groups["cuts"][k]])
        raise ValidationError(f"outcome {o.name!r} is continuous and has no cuts")

    def correlation(self) -> np.ndarray:
        pos, ab = self.layout._groups["rho"]
        corr = np.eye(self.layout.structure.dim)
        corr[ab[:, 0], ab[:, 1]] = corr[ab[:, 1], ab[:, 0]] = self.values[pos]
        return corr


def params_from_design(design: LatentDesign, layout: ParameterLayout | None = None) -> ParameterVector:
    """The design's own parameters expressed in the fitting layout.

    Applies the ordinal anchoring (control mean folded into the cuts), so the
    result is directly comparable to a fit of data simulated from ``design``.
    """
    layout = layout or ParameterLayout.for_structure(design)
    values = np.empty(layout.size)
    corr = np.asarray(design.correlation, dtype=np.float64)
    for i, t in enumerate(layout.terms):
        kind, k = t[0], t[1]
        o = design.outcomes[k] if kind != "rho" else None
        if kind == "mean_T":
            anchor = o.mean_control if o.kind == "ordinal" else 0.0
            values[i] = o.mean_treatment - anchor
        elif kind == "mean_C":
            values[i] = o.mean_control
        elif kind == "sd":
            values[i] = o.sd
        elif kind == "cut":
            values[i] = o.cuts[t[2] - 1] - o.mean_control
        else:
            values[i] = corr[t[1], t[2]]
    return ParameterVector(layout, values)


def fitted_design(params: ParameterVector, rule: ResponderRule | None = None) -> LatentDesign:
    """A design whose model parameters are the fitted ones.

    Useful for feeding fitted values back into the analytic power and sample
    size machinery.
    """
    struct = params.layout.structure
    sds = params.sds()
    mt, mc = params.means("T"), params.means("C")
    outcomes = []
    for k, o in enumerate(struct.outcomes):
        fields = {"mean_treatment": float(mt[k]), "mean_control": float(mc[k])}
        if o.kind == "continuous":
            fields["sd"] = float(sds[k])
        else:
            fields["cuts"] = params.cuts(k)
        outcomes.append(replace(o, **fields))
    return LatentDesign(
        outcomes=tuple(outcomes),
        correlation=params.correlation(),
        responder_rule=rule if rule is not None else struct.responder_rule,
        allocation=struct.allocation,
        permutation=struct.permutation,
    )


# ---------------------------------------------------------------------------
# internal (unconstrained) reparameterization for the joint polish
# ---------------------------------------------------------------------------

def _to_internal(values: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    x = np.array(values, dtype=np.float64)
    last_cut: dict[int, float] = {}
    for i, t in enumerate(layout.terms):
        if t[0] == "sd":
            x[i] = math.log(values[i])
        elif t[0] == "rho":
            x[i] = math.atanh(min(max(values[i], -0.9999999), 0.9999999))
        elif t[0] == "cut":
            k, j = t[1], t[2]
            x[i] = values[i] if j == 1 else math.log(values[i] - last_cut[k])
            last_cut[k] = values[i]
    return x


def _from_internal(x: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    values = np.array(x, dtype=np.float64)
    last_cut: dict[int, float] = {}
    with np.errstate(over="ignore"):
        for i, t in enumerate(layout.terms):
            if t[0] == "sd":
                values[i] = math.exp(min(x[i], 700.0))
            elif t[0] == "rho":
                values[i] = math.tanh(x[i])
            elif t[0] == "cut":
                k, j = t[1], t[2]
                values[i] = x[i] if j == 1 else last_cut[k] + math.exp(min(x[i], 700.0))
                last_cut[k] = values[i]
    return values


# ---------------------------------------------------------------------------
# data preparation and the mixed log-likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _FitData:
    idx_c: np.ndarray
    idx_d: np.ndarray
    y: dict          # arm -> (n, n_continuous) float array
    cat: dict        # arm -> (n, n_discrete) int array
    n: dict          # arm -> int


def _prepare(dataset: TrialDataset, structure: LatentDesign) -> _FitData:
    if dataset.names != structure.names or dataset.kinds != structure.kinds:
        raise FitError(
            "dataset columns do not match the model structure: "
            f"{dataset.names}/{dataset.kinds} vs {structure.names}/{structure.kinds}"
        )
    expected_levels = tuple(o.n_categories for o in structure.outcomes)
    if dataset.levels != expected_levels:
        raise FitError(f"dataset levels {dataset.levels} do not match structure {expected_levels}")
    idx_c = np.array([k for k, o in enumerate(structure.outcomes) if not o.is_discrete], dtype=np.intp)
    idx_d = np.array([k for k, o in enumerate(structure.outcomes) if o.is_discrete], dtype=np.intp)
    y, cat, n = {}, {}, {}
    for arm, block in (("T", dataset.treatment), ("C", dataset.control)):
        y[arm] = block[:, idx_c].astype(np.float64)
        cat[arm] = block[:, idx_d].astype(np.intp)
        n[arm] = block.shape[0]
    for pos, k in enumerate(idx_d):
        o = structure.outcomes[k]
        observed = set(np.unique(cat["T"][:, pos])) | set(np.unique(cat["C"][:, pos]))
        if o.kind == "ordinal" and len(observed) < 2:
            raise FitError(
                f"ordinal outcome {o.name!r} shows a single observed category; "
                "its cuts are not estimable"
            )
    return _FitData(idx_c=idx_c, idx_d=idx_d, y=y, cat=cat, n=n)


def _category_bounds(cuts: tuple[float, ...], cat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ext = np.concatenate(([-np.inf], np.asarray(cuts, dtype=np.float64), [np.inf]))
    return ext[cat], ext[cat + 1]


def _loglik(
    values: np.ndarray,
    layout: ParameterLayout,
    data: _FitData,
    pseudo: tuple = (),
    qmc_accuracy: float = 1e-6,
    qmc_seed: int = 7,
) -> float:
    """Mixed log-likelihood at a natural-scale parameter vector.

    Returns -inf for infeasible parameters (non-increasing cuts, invalid
    correlations, non-PD covariance blocks).
    """
    struct = layout.structure
    p = ParameterVector(layout, values)
    sds = p.sds()
    if not np.all(np.isfinite(p.values)) or np.any(sds <= 0.0):
        return -math.inf
    corr = p.correlation()
    if np.any(np.abs(corr) > 1.0):
        return -math.inf
    all_cuts = {}
    for k in data.idx_d:
        cuts = p.cuts(int(k))
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            return -math.inf
        all_cuts[int(k)] = cuts
    sigma = corr * np.outer(sds, sds)
    ic, idd = data.idx_c, data.idx_d
    m = idd.size

    ll = 0.0
    for arm in ("T", "C"):
        mu = p.means(arm)
        n_arm = data.n[arm]
        resid = None
        if ic.size:
            scc = sigma[np.ix_(ic, ic)]
            try:
                chol = np.linalg.cholesky(scc)
            except np.linalg.LinAlgError:
                return -math.inf
            resid = data.y[arm] - mu[ic]
            white = solve_triangular(chol, resid.T, lower=True)
            ll += (
                -0.5 * float(np.sum(white * white))
                - n_arm * (0.5 * ic.size * math.log(2.0 * math.pi)
                           + float(np.sum(np.log(np.diag(chol)))))
            )
        if m:
            if ic.size:
                sdc = sigma[np.ix_(idd, ic)]
                a_mat = np.linalg.solve(sigma[np.ix_(ic, ic)], sdc.T).T
                cond_cov = sigma[np.ix_(idd, idd)] - a_mat @ sdc.T
                cond_mean = mu[idd] + resid @ a_mat.T
            else:
                cond_cov = sigma[np.ix_(idd, idd)]
                cond_mean = np.broadcast_to(mu[idd], (n_arm, m))
            s = np.sqrt(np.clip(np.diag(cond_cov), 0.0, None))
            if np.any(s <= 0.0):
                return -math.inf
            lo = np.empty((n_arm, m))
            up = np.empty((n_arm, m))
            for pos, k in enumerate(idd):
                lo[:, pos], up[:, pos] = _category_bounds(all_cuts[int(k)], data.cat[arm][:, pos])
            lo_z = (lo - cond_mean) / s
            up_z = (up - cond_mean) / s
            if m == 1:
                probs = ndtr(up_z[:, 0]) - ndtr(lo_z[:, 0])
            elif m == 2:
                r = float(cond_cov[0, 1] / (s[0] * s[1]))
                if not -1.0 < r < 1.0:
                    return -math.inf
                probs = bvn_rectangle(lo_z[:, 0], up_z[:, 0], lo_z[:, 1], up_z[:, 1], r)
            else:
                cond_corr = cond_cov / np.outer(s, s)
                try:
                    gamma = CorrelationMatrix(0.5 * (cond_corr + cond_corr.T))
                except Exception:
                    return -math.inf
                probs = np.empty(n_arm)
                if ic.size:
                    for i in range(n_arm):
                        probs[i] = mvn_rectangle(
                            lo_z[i], up_z[i], gamma, accuracy=qmc_accuracy, seed=qmc_seed
                        ).value
                else:
                    rows, inverse = np.unique(
                        data.cat[arm], axis=0, return_inverse=True
                    )
                    vals = np.empty(rows.shape[0])
                    for i in range(rows.shape[0]):
                        vals[i] = mvn_rectangle(
                            lo_z[np.flatnonzero(inverse == i)[0]],
                            up_z[np.flatnonzero(inverse == i)[0]],
                            gamma,
                            accuracy=qmc_accuracy,
                            seed=qmc_seed,
                        ).value
                    probs = vals[inverse]
            ll += float(np.sum(np.log(np.clip(probs, _TINY_P, None))))

    for k, category, arm, weight in pseudo:
        mu_k = p.means(arm)[k]
        lo, up = _category_bounds(all_cuts[k], np.array([category]))
        prob = float(ndtr(up[0] - mu_k) - ndtr(lo[0] - mu_k))
        ll += weight * math.log(max(prob, _TINY_P))
    return ll


def loglik_function(dataset: TrialDataset, structure: LatentDesign, smoothed: bool = False):
    """(evaluator, layout, start) for the dataset's mixed log-likelihood.

    The evaluator maps a natural-scale value array to the log-likelihood;
    ``smoothed`` includes the empty-category pseudo-observations the fitter
    uses.  ``start`` is the two-stage estimate.
    """
    layout = ParameterLayout.for_structure(structure)
    data = _prepare(dataset, structure)
    values, pseudo, _ = _two_stage(data, layout)
    terms = tuple(pseudo) if smoothed else ()
    return (lambda v: _loglik(np.asarray(v, dtype=np.float64), layout, data, terms)), layout, values


# ---------------------------------------------------------------------------
# stage 1: marginal estimates (+ pseudo-count smoothing)
# ---------------------------------------------------------------------------

def _corrected_proportion(x: float, n: int) -> float:
    return (x + 0.5) / (n + 1.0) if x in (0.0, float(n)) else x / n


def _stage_binary(cat_t: np.ndarray, cat_c: np.ndarray, k: int):
    pseudo, corrections = [], 0
    mus = []
    for arm, col in (("T", cat_t), ("C", cat_c)):
        x = float(np.count_nonzero(col))
        n = col.size
        if x in (0.0, float(n)):
            pseudo += [(k, 0, arm, 0.5), (k, 1, arm, 0.5)]
            corrections += 1
        mus.append(ndtri(_corrected_proportion(x, n)))
    return mus[0], mus[1], pseudo, corrections


def _stage_ordinal(cat_t: np.ndarray, cat_c: np.ndarray, k: int, n_levels: int):
    """Marginal ordered-probit ML (treatment shift + cuts, control anchored).

    Pooled-empty categories receive half a pseudo-observation split across
    arms by size, keeping every cut finite and identifiable.
    """
    counts = {
        "T": np.bincount(cat_t, minlength=n_levels).astype(np.float64),
        "C": np.bincount(cat_c, minlength=n_levels).astype(np.float64),
    }
    n_t, n_c = cat_t.size, cat_c.size
    pseudo, corrections = [], 0
    for c in range(n_levels):
        if counts["T"][c] + counts["C"][c] == 0.0:
            w_t = 0.5 * n_t / (n_t + n_c)
            pseudo += [(k, c, "T", w_t), (k, c, "C", 0.5 - w_t)]
            counts["T"][c] += w_t
            counts["C"][c] += 0.5 - w_t
            corrections += 1

    pooled = counts["T"] + counts["C"]
    cum = np.cumsum(pooled)[:-1] / pooled.sum()
    tau0 = ndtri(np.clip(cum, 1e-6, 1.0 - 1e-6))
    x0 = np.concatenate(([0.0, tau0[0]], np.log(np.maximum(np.diff(tau0), 1e-3))))

    def unpack(x):
        mu = x[0]
        tau = np.empty(n_levels - 1)
        tau[0] = x[1]
        tau[1:] = x[1] + np.cumsum(np.exp(np.minimum(x[2:], 700.0)))
        return mu, tau

    def negll(x):
        mu, tau = unpack(x)
        ext = np.concatenate(([-np.inf], tau, [np.inf]))
        ll = 0.0
        for arm, shift in (("T", mu), ("C", 0.0)):
            probs = np.diff(ndtr(ext - shift))
            ll += float(counts[arm] @ np.log(np.clip(probs, _TINY_P, None)))
        return -ll if math.isfinite(ll) else _PENALTY

    res = minimize(negll, x0, method="L-BFGS-B", options={"maxiter": 200})
    mu, tau = unpack(res.x)
    return float(mu), tuple(float(t) for t in tau), pseudo, corrections


def _two_stage(data: _FitData, layout: ParameterLayout):
    """Two-stage start: marginal fits, then pairwise correlations."""
    struct = layout.structure
    values = np.zeros(layout.size)
    pseudo: list[tuple] = []
    corrections = 0

    # stage 1: marginals
    z_resid = {}   # continuous standardized residuals per outcome (for stage 2)
    for k, o in enumerate(struct.outcomes):
        if o.kind == "continuous":
            pos = int(np.flatnonzero(data.idx_c == k)[0])
            y_t, y_c = data.y["T"][:, pos], data.y["C"][:, pos]
            mu_t, mu_c = float(np.mean(y_t)), float(np.mean(y_c))
            ssq = float(np.sum((y_t - mu_t) ** 2) + np.sum((y_c - mu_c) ** 2))
            sd = math.sqrt(ssq / (y_t.size + y_c.size))
            values[layout.index(("mean_T", k))] = mu_t
            values[layout.index(("mean_C", k))] = mu_c
            values[layout.index(("sd", k))] = sd
            z_resid[k] = {"T": (y_t - mu_t) / sd, "C": (y_c - mu_c) / sd}
        elif o.kind == "binary":
            pos = int(np.flatnonzero(data.idx_d == k)[0])
            mu_t, mu_c, extra, fixed = _stage_binary(
                data.cat["T"][:, pos], data.cat["C"][:, pos], k
            )
            values[layout.index(("mean_T", k))] = mu_t
            values[layout.index(("mean_C", k))] = mu_c
            pseudo += extra
            corrections += fixed
        else:
            pos = int(np.flatnonzero(data.idx_d == k)[0])
            mu_t, tau, extra, fixed = _stage_ordinal(
                data.cat["T"][:, pos], data.cat["C"][:, pos], k, o.levels
            )
            values[layout.index(("mean_T", k))] = mu_t
            for j, t in enumerate(tau, start=1):
                values[layout.index(("cut", k, j))] = t
            pseudo += extra
            corrections += fixed

    # stage 2: pairwise correlations given the stage-1 marginals
    params = ParameterVector(layout, values)
    dim = struct.dim
    corr = np.eye(dim)
    for a, b in itertools.combinations(range(dim), 2):
        ka, kb = struct.outcomes[a].kind, struct.outcomes[b].kind
        if ka == "continuous" and kb == "continuous":
            rho = _pearson_pooled(z_resid[a], z_resid[b])
        elif ka == "continuous":
            rho = _polyserial(z_resid[a], _discrete_bounds(params, data, b))
        elif kb == "continuous":
            rho = _polyserial(z_resid[b], _discrete_bounds(params, data, a))
        else:
            rho = _polychoric(_discrete_bounds(params, data, a), _discrete_bounds(params, data, b))
        corr[a, b] = corr[b, a] = rho

    projected = False
    eigvals = np.linalg.eigvalsh(corr)
    if eigvals.min() < _MIN_CORR_EIGENVALUE:
        w, v = np.linalg.eigh(corr)
        corr = (v * np.maximum(w, _MIN_CORR_EIGENVALUE)) @ v.T
        d = np.sqrt(np.diag(corr))
        corr = corr / np.outer(d, d)
        projected = True
    for a, b in itertools.combinations(range(dim), 2):
        values[layout.index(("rho", a, b))] = corr[a, b]

    return values, pseudo, {"corrections": corrections, "projected_correlation": projected}


def _pearson_pooled(za: dict, zb: dict) -> float:
    num = den_a = den_b = 0.0
    for arm in ("T", "C"):
        xa, xb = za[arm] - za[arm].mean(), zb[arm] - zb[arm].mean()
        num += float(xa @ xb)
        den_a += float(xa @ xa)
        den_b += float(xb @ xb)
    r = num / math.sqrt(den_a * den_b)
    return min(max(r, -_RHO_BOUND), _RHO_BOUND)


def _discrete_bounds(params: ParameterVector, data: _FitData, k: int) -> dict:
    """Per-arm standardized category bounds of a discrete outcome."""
    pos = int(np.flatnonzero(data.idx_d == k)[0])
    cuts = params.cuts(k)
    out = {}
    for arm in ("T", "C"):
        mu = params.means(arm)[k]
        lo, up = _category_bounds(cuts, data.cat[arm][:, pos])
        out[arm] = (lo - mu, up - mu)
    return out


def _polyserial(z: dict, bounds: dict) -> float:
    """Pairwise ML correlation of a continuous and a discrete outcome."""

    def negll(rho):
        s = math.sqrt(1.0 - rho * rho)
        total = 0.0
        for arm in ("T", "C"):
            lo, up = bounds[arm]
            probs = ndtr((up - rho * z[arm]) / s) - ndtr((lo - rho * z[arm]) / s)
            total += float(np.sum(np.log(np.clip(probs, _TINY_P, None))))
        return -total

    res = minimize_scalar(negll, bounds=(-_RHO_BOUND, _RHO_BOUND), method="bounded")
    return float(res.x)


def _polychoric(bounds_a: dict, bounds_b: dict) -> float:
    """Pairwise ML correlation of two discrete outcomes."""

    def negll(rho):
        total = 0.0
        for arm in ("T", "C"):
            lo_a, up_a = bounds_a[arm]
            lo_b, up_b = bounds_b[arm]
            probs = bvn_rectangle(lo_a, up_a, lo_b, up_b, rho)
            total += float(np.sum(np.log(np.clip(probs, _TINY_P, None))))
        return -total

    res = minimize_scalar(negll, bounds=(-_RHO_BOUND, _RHO_BOUND), method="bounded")
    return float(res.x)


# ---------------------------------------------------------------------------
# fit driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with covariance and convergence metadata."""

    params: ParameterVector
    covariance: np.ndarray | None
    covariance_status: str          # "information" | "bootstrap" | "unusable" | "skipped"
    log_likelihood: float
    converged: bool
    iterations: int
    n_treatment: int
    n_control: int
    diagnostics: dict

    @property
    def usable_covariance(self) -> bool:
        return self.covariance is not None and self.covariance_status in (
            "information",
            "bootstrap",
        )

    def standard_errors(self) -> np.ndarray:
        if not self.usable_covariance:
            raise FitError(f"covariance is {self.covariance_status}; no standard errors")
        return np.sqrt(np.diag(self.covariance))

    def report(self) -> dict:
        """JSON-compatible summary of the fit."""
        out = {
            "estimates": self.params.as_dict(),
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_treatment": self.n_treatment,
            "n_control": self.n_control,
            "covariance_status": self.covariance_status,
            "diagnostics": {k: v for k, v in self.diagnostics.items() if k != "message"},
        }
        if self.usable_covariance:
            out["standard_errors"] = dict(
                zip(self.params.layout.names, map(float, self.standard_errors()))
            )
        return out


def fit(
    dataset: TrialDataset,
    structure: LatentDesign,
    refine: bool = True,
    max_iterations: int = 500,
    compute_covariance: bool = True,
    bootstrap_fallback: bool = False,
    bootstrap_resamples: int = 200,
    seed: int = 0,
) -> FitResult:
    """Fit the latent model to a dataset.

    ``structure`` supplies outcome kinds, level counts and bands; its
    parameter values are never consulted.  The two-stage estimate is always
    computed; ``refine`` (default on) polishes it by joint quasi-Newton
    maximization of the full likelihood, capped at ``max_iterations``.

    The covariance is the inverse numeric observed information of the
    (smoothed) log-likelihood; if that fails and ``bootstrap_fallback`` is
    set, a within-arm resampling bootstrap takes over (flagged in
    ``covariance_status``); otherwise the covariance is flagged unusable.
    """
    structure.require_valid()
    layout = ParameterLayout.for_structure(structure)
    data = _prepare(dataset, structure)
    values, pseudo, diagnostics = _two_stage(data, layout)
    pseudo = tuple(pseudo)
    diagnostics["pseudo_terms"] = len(pseudo)

    def smoothed_ll(v):
        return _loglik(v, layout, data, pseudo)

    converged, iterations = True, 0
    if refine:
        x0 = _to_internal(values, layout)

        def objective(x):
            ll = _loglik(_from_internal(x, layout), layout, data, pseudo)
            return -ll if math.isfinite(ll) else _PENALTY

        res = minimize(
            objective, x0, method="L-BFGS-B", options={"maxiter": int(max_iterations)}
        )
        values = _from_internal(res.x, layout)
        converged = bool(res.success)
        iterations = int(res.nit)
        diagnostics["message"] = str(res.message)
        diagnostics["objective_evaluations"] = int(res.nfev)

    params = ParameterVector(layout, values)
    ll_data = _loglik(values, layout, data, ())
    diagnostics["smoothed_log_likelihood"] = smoothed_ll(values)

    covariance, status = None, "skipped"
    if compute_covariance:
        try:
            info = observed_information(smoothed_ll, values, names=layout.names)
            eigvals = np.linalg.eigvalsh(info)
            if eigvals.min() <= 0.0:
                raise NumericalError(
                    f"observed information is not positive definite "
                    f"(smallest eigenvalue {eigvals.min():.6g})"
                )
            covariance = np.linalg.inv(info)
            covariance = 0.5 * (covariance + covariance.T)
            status = "information"
        except NumericalError as exc:
            diagnostics["covariance_failure"] = str(exc)
            if bootstrap_fallback:
                covariance = bootstrap_covariance(
                    dataset,
                    structure,
                    resamples=bootstrap_resamples,
                    seed=seed,
                    refine=refine,
                )
                status = "bootstrap"
            else:
                status = "unusable"

    return FitResult(
        params=params,
        covariance=covariance,
        covariance_status=status,
        log_likelihood=ll_data,
        converged=converged,
        iterations=iterations,
        n_treatment=dataset.n_treatment,
        n_control=dataset.n_control,
        diagnostics=diagnostics,
    )


def observed_information(fun, theta, names=None, step_scale: float = _INFO_STEP) -> np.ndarray:
    """Negative numeric Hessian of ``fun`` at ``theta``, symmetrized.

    Central differences with per-coordinate step ``step_scale * max(1,
    |theta_j|)``.  A non-finite entry raises ``NumericalError`` naming the
    parameter pair involved.
    """
    theta = np.asarray(theta, dtype=np.float64).copy()
    p = theta.size
    labels = list(names) if names is not None else [f"theta[{i}]" for i in range(p)]
    if len(labels) != p:
        raise ValidationError(f"{len(labels)} names for {p} parameters")
    h = step_scale * np.maximum(1.0, np.abs(theta))

    def at(offsets):
        point = theta.copy()
        for idx, sign in offsets:
            point[idx] += sign * h[idx]
        return float(fun(point))

    f0 = float(fun(theta))
    if not math.isfinite(f0):
        raise NumericalError("log-likelihood is not finite at the evaluation point")
    hess = np.empty((p, p))
    for i in range(p):
        fp, fm = at([(i, +1.0)]), at([(i, -1.0)])
        hess[i, i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i])
        if not math.isfinite(hess[i, i]):
            raise NumericalError(
                f"observed information entry ({labels[i]}, {labels[i]}) is not finite"
            )
    for i in range(p):
        for j in range(i + 1, p):
            fpp = at([(i, +1.0), (j, +1.0)])
            fpm = at([(i, +1.0), (j, -1.0)])
            fmp = at([(i, -1.0), (j, +1.0)])
            fmm = at([(i, -1.0), (j, -1.0)])
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
            if not math.isfinite(hess[i, j]):
                raise NumericalError(
                    f"observed information entry ({labels[i]}, {labels[j]}) is not finite"
                )
    return -0.5 * (hess + hess.T)


def bootstrap_covariance(
    dataset: TrialDataset,
    structure: LatentDesign,
    resamples: int = 200,
    seed: int = 0,
    refine: bool = True,
    max_failure_rate: float = 0.25,
) -> np.ndarray:
    """Within-arm nonparametric bootstrap covariance of the fitted parameters."""
    if resamples < 20:
        raise ValidationError(f"need at least 20 bootstrap resamples, got {resamples}")
    estimates = []
    failures = 0
    for r in range(int(resamples)):
        rng = np.random.Generator(np.random.Philox(key=[int(seed), r]))
        rows_t = rng.integers(0, dataset.n_treatment, dataset.n_treatment)
        rows_c = rng.integers(0, dataset.n_control, dataset.n_control)
        resample = TrialDataset(
            names=dataset.names,
            kinds=dataset.kinds,
            levels=dataset.levels,
            treatment=dataset.treatment[rows_t],
            control=dataset.control[rows_c],
        )
        try:
            result = fit(
                resample, structure, refine=refine, compute_covariance=False
            )
            if not result.converged:
                failures += 1
                continue
            estimates.append(result.params.values)
        except (FitError, NumericalError):
            failures += 1
    if failures > max_failure_rate * resamples or len(estimates) < 2:
        raise FitError(
            f"bootstrap failed on {failures}/{resamples} resamples; covariance unusable"
        )
    stacked = np.vstack(estimates)
    return np.cov(stacked, rowvar=False, ddof=1)


# ---------------------------------------------------------------------------
# responder functionals: delta*, its variance, the Wald test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeltaMethod:
    """First-order variance of the model-based responder-rate difference."""

    delta_star: float
    variance: float
    standard_error: float
    sigma_sq: float
    gradient: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gradient, dtype=np.float64)
        g.setflags(write=False)
        object.__setattr__(self, "gradient", g)


def _rule_bounds(params: ParameterVector, rule: ResponderRule):
    """Standardized per-arm rectangle bounds for the responder region.

    Outcomes without a (binding) rule entry are marginalized away.  Returns
    (kept outcome indices, lower/upper per arm).
    """
    struct = params.layout.structure
    for entry in rule.entries:
        struct.index_of(entry.outcome)  # unknown outcome -> error
    mt, mc = params.means("T"), params.means("C")
    sds = params.sds()
    keep, bounds = [], {"T": ([], []), "C": ([], [])}
    for k, o in enumerate(struct.outcomes):
        entry = rule.entry_for(o.name)
        if entry is None:
            continue
        if o.is_discrete:
            if entry.cut is None:
                raise ValidationError(
                    f"rule entry for {o.name!r} needs a cut index, not a threshold"
                )
            lo, up = cut_interval(params.cuts(k), int(entry.cut), entry.direction)
        else:
            if entry.threshold is None:
                raise ValidationError(
                    f"rule entry for {o.name!r} needs a threshold, not a cut index"
                )
            eta = float(entry.threshold)
            lo, up = (eta, math.inf) if entry.direction == "above" else (-math.inf, eta)
        if math.isinf(lo) and lo < 0 and math.isinf(up):
            continue  # never binds
        keep.append(k)
        for arm, mu in (("T", mt[k]), ("C", mc[k])):
            bounds[arm][0].append((lo - mu) / sds[k])
            bounds[arm][1].append((up - mu) / sds[k])
    return keep, bounds


def _delta_evaluator(
    params0: ParameterVector,
    rule: ResponderRule,
    seed: int = _DELTA_SEED,
    budget: int = _DELTA_BUDGET,
):
    """delta* as a function of the parameter values, with the integration
    order and lattice pinned at the base point so finite differences ride on
    common random numbers."""
    layout = params0.layout
    keep0, bounds0 = _rule_bounds(params0, rule)
    if not keep0:
        return (lambda values: 0.0)
    ix = np.ix_(keep0, keep0)
    orders = {}
    if len(keep0) > 2:
        corr0 = CorrelationMatrix(params0.correlation()[ix])
        for arm in ("T", "C"):
            lo, up = bounds0[arm]
            orders[arm] = rectangle_order(lo, up, corr0)

    def evaluate(values) -> float:
        p = ParameterVector(layout, np.asarray(values, dtype=np.float64))
        keep, bounds = _rule_bounds(p, rule)
        if keep != keep0:
            raise NumericalError(
                "the responder region changed structure during differentiation"
            )
        gamma = CorrelationMatrix(p.correlation()[ix])
        probs = {}
        for arm in ("T", "C"):
            lo, up = bounds[arm]
            probs[arm] = mvn_rectangle(
                lo,
                up,
                gamma,
                accuracy=4e-16,           # below the error floor: always spend the budget
                seed=seed,
                max_evaluations=max(budget, 12 * 128),
                order=orders.get(arm),
            ).value
        return probs["T"] - probs["C"]

    return evaluate


def delta_star(
    result: FitResult | ParameterVector,
    rule: ResponderRule,
    accuracy: float = 1e-7,
    seed: int = _DELTA_SEED,
) -> float:
    """Model-based responder-rate difference at the fitted parameters."""
    params = result.params if isinstance(result, FitResult) else result
    keep, bounds = _rule_bounds(params, rule)
    if not keep:
        return 0.0
    gamma = CorrelationMatrix(params.correlation()[np.ix_(keep, keep)])
    probs = {}
    for arm in ("T", "C"):
        lo, up = bounds[arm]
        probs[arm] = mvn_rectangle(lo, up, gamma, accuracy=accuracy, seed=seed).value
    return float(probs["T"] - probs["C"])


def delta_variance(
    result: FitResult,
    rule: ResponderRule,
    seed: int = _DELTA_SEED,
    budget: int = _DELTA_BUDGET,
) -> DeltaMethod:
    """Delta-method variance of the fitted responder-rate difference.

    The gradient is a central finite difference (step 1e-5 * max(1,
    |theta_j|)) of the rectangle functional, evaluated on a pinned
    integration order and lattice so the differences cancel integration
    noise.  Also reports the per-subject variance unit sigma_sq =
    var / (1/n_T + 1/n_C) that the composite sample-size formula consumes.
    """
    if not isinstance(result, FitResult):
        raise ValidationError("delta_variance needs a FitResult (with covariance)")
    if not result.usable_covariance:
        raise FitError(
            f"covariance is {result.covariance_status}; delta-method variance unavailable"
        )
    params = result.params
    evaluate = _delta_evaluator(params, rule, seed=seed, budget=budget)
    theta = params.values.copy()
    names = params.layout.names
    grad = np.zeros(theta.size)
    for j in range(theta.size):
        h = _GRAD_STEP * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        try:
            grad[j] = (evaluate(up) - evaluate(down)) / (2.0 * h)
        except (ValidationError, NumericalError) as exc:
            raise NumericalError(
                f"delta gradient step on {names[j]} failed: {exc}"
            ) from exc
    variance = float(grad @ result.covariance @ grad)
    if variance < 0.0:
        raise NumericalError(
            f"delta-method quadratic form is negative ({variance:.6g}); "
            "the covariance is not usable at this point"
        )
    value = float(evaluate(theta))
    per_subject = 1.0 / result.n_treatment + 1.0 / result.n_control
    return DeltaMethod(
        delta_star=value,
        variance=variance,
        standard_error=math.sqrt(variance),
        sigma_sq=variance / per_subject,
        gradient=grad,
    )


def wald_test(result: FitResult, rule: ResponderRule, alpha: float = 0.025) -> bool:
    """One-sided test of a positive responder-rate difference."""
    if not 0.0 < alpha < 0.5:
        raise ValidationError(f"one-sided alpha must lie in (0, 0.5), got {alpha}")
    dm = delta_variance(result, rule)
    if dm.variance == 0.0:
        raise NumericalError("degenerate (zero) delta-method variance")
    return bool(dm.delta_star / dm.standard_error > std_normal_quantile(1.0 - alpha))
