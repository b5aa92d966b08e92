"""Design-preserving bootstrap for the logistic growth difference, and
bootstrap calibration of the likelihood-ratio threshold (pp-plots)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import chi2

from .fastfit import logistic_refit
from .inference import Dataset, FitError, Objective, StartPolicy, fit
from .optimize import trust_region
from .profiles import ConfidenceRegion

__all__ = [
    "DesignError",
    "ReliabilityError",
    "BootstrapPlan",
    "BootstrapResult",
    "bootstrap_ci_difference",
    "stratified_indices",
    "PPCurve",
    "pp_calibration",
    "classify_pp",
    "KS_BAND_95",
]

# asymptotic 95% two-sided Kolmogorov-Smirnov critical value; band = KS_BAND_95 / sqrt(n)
KS_BAND_95 = 1.358


class DesignError(ValueError):
    """The dataset does not satisfy the bootstrap design preconditions."""


class ReliabilityError(RuntimeError):
    """Too many bootstrap refits failed for the interval to be trusted."""


@dataclass(frozen=True)
class BootstrapPlan:
    """Resampling plan.

    ``refit_starts`` counts optimiser starts per replicate; the first is
    always the full-data estimate, further ones are Latin-hypercube points
    around it.
    """

    n_resamples: int = 999
    seed: int = 0
    refit_starts: int = 1
    l2_weight: float = 1e-3
    max_failure_rate: float = 0.2
    n_starts: int = 20
    min_records: int = 8
    jobs: int = 1

    def __post_init__(self):
        if self.n_resamples < 1:
            raise ValueError("n_resamples must be positive")


def stratified_indices(data, rng):
    """Resample record indices with replacement within each measurement day."""
    parts = []
    for day, idx in sorted(data.strata().items()):
        parts.append(idx[rng.integers(0, idx.size, idx.size)])
    return np.concatenate(parts)


def _check_design(data, plan):
    if data.n < plan.min_records:
        raise DesignError(f"bootstrap needs at least {plan.min_records} records, got {data.n}")
    small = {d: idx.size for d, idx in data.strata().items() if idx.size < 2}
    if small:
        raise DesignError(f"strata with fewer than 2 records: {small}")
    if len(data.strata()) < 2:
        raise DesignError("bootstrap needs records on at least two days")


def _refit_from(objective, z0, n_starts, seed):
    """Local refit from ``z0`` (plus optional extra starts); returns z or None."""
    lower = objective.lower_bounds()
    best = None
    if n_starts > 1:
        points = StartPolicy(n_starts=n_starts).starts(objective, z0, seed)
    else:
        points = [z0]
    for x0 in points:
        if objective.model == "logistic":
            x, fun, ok = logistic_refit(objective, x0)
        else:
            res = trust_region(objective.value_grad_hess, x0, lower=lower, gtol=1e-8,
                               xtol=1e-8, max_iter=500)
            x, fun, ok = res.x, res.fun, res.converged
        if ok and np.isfinite(fun) and (best is None or fun < best[1]):
            best = (x, fun)
    return None if best is None else best[0]


def _difference(objective, z):
    pv = objective.param_vector(z)
    return pv["lambda2"] - pv["lambda1"]


def _replicate_chunk(objective, data, z_hat, plan, indices):
    out = np.full(len(indices), np.nan)
    for k, b in enumerate(indices):
        rng = np.random.default_rng([plan.seed, b])
        sample = data.resampled(stratified_indices(data, rng))
        z = _refit_from(objective.with_data(sample), z_hat, plan.refit_starts,
                        [plan.seed, b, 1])
        if z is not None:
            out[k] = _difference(objective, z)
    return out


@dataclass
class BootstrapResult:
    region: ConfidenceRegion
    estimate: float
    replicates: np.ndarray = field(repr=False)
    n_failed: int
    fit: object = field(repr=False, default=None)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "difference"])
        for i, v in enumerate(self.replicates):
            w.writerow([i, repr(float(v))])
        return buf.getvalue()


def bootstrap_ci_difference(data, plan=None, level=0.95, fixed=None, full_fit=None):
    """Percentile interval for ``lambda2 - lambda1`` of the logistic model.

    Records are resampled with replacement within each measurement day so
    that every replicate keeps the original per-day counts.  ``fixed``
    pins logistic components (typically ``capacity`` and ``x1_0``).
    """
    plan = plan or BootstrapPlan()
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    _check_design(data, plan)
    objective = Objective("logistic", data, fixed=fixed, l2_weight=plan.l2_weight)
    if full_fit is None:
        full_fit = fit(objective, starts=plan.n_starts, seed=plan.seed)
    z_hat = full_fit.z
    chunks = np.array_split(np.arange(plan.n_resamples), max(1, plan.jobs))
    if plan.jobs > 1:
        parts = Parallel(n_jobs=plan.jobs)(
            delayed(_replicate_chunk)(objective, data, z_hat, plan, c) for c in chunks)
    else:
        parts = [_replicate_chunk(objective, data, z_hat, plan, c) for c in chunks]
    reps = np.concatenate(parts)
    failed = int(np.isnan(reps).sum())
    if failed > plan.max_failure_rate * plan.n_resamples:
        raise ReliabilityError(f"{failed} of {plan.n_resamples} bootstrap refits failed")
    good = reps[~np.isnan(reps)]
    alpha = 1.0 - level
    lo, hi = np.quantile(good, [alpha / 2, 1 - alpha / 2])
    region = ConfidenceRegion(((float(lo), float(hi)),), "bootstrap", math.nan, level)
    return BootstrapResult(region, _difference(objective, z_hat), reps, failed, full_fit)


# ---------------------------------------------------------------------------
# pp-plot calibration


@dataclass
class PPCurve:
    parameter: str
    empirical_ratios: np.ndarray
    classification: str = ""
    band_halfwidth: float = math.nan
    n_failed: int = 0

    def ecdf(self, x):
        r = np.sort(self.empirical_ratios)
        return np.searchsorted(r, np.asarray(x, float), side="right") / max(r.size, 1)

    def points(self):
        """(theoretical chi2(1) CDF, empirical CDF) at every ratio."""
        r = np.sort(self.empirical_ratios)
        return chi2.cdf(r, 1), self.ecdf(r)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "ratio", "chi2_cdf", "ecdf"])
        theo, emp = self.points()
        for r, a, b in zip(np.sort(self.empirical_ratios), theo, emp):
            w.writerow([self.parameter, repr(float(r)), repr(float(a)), repr(float(b))])
        return buf.getvalue()


def classify_pp(curve, band_halfwidth=None):
    """perfect / conservative / anti-conservative / alternating.

    The ECDF is compared with the chi2(1) CDF at every observed ratio
    (both one-sided limits of the step function).  Excursions above the
    band make the threshold conservative, excursions below make it
    anti-conservative.
    """
    r = np.sort(np.asarray(curve.empirical_ratios, float))
    if r.size == 0:
        raise ValueError("empty pp curve")
    if band_halfwidth is None:
        band_halfwidth = KS_BAND_95 / math.sqrt(r.size)
    theo = chi2.cdf(np.maximum(r, 0.0), 1)
    upper = np.searchsorted(r, r, side="right") / r.size
    lower = np.searchsorted(r, r, side="left") / r.size
    tol = 1e-12
    above = bool(np.any(upper - theo > band_halfwidth + tol))
    below = bool(np.any(theo - lower > band_halfwidth + tol))
    if above and below:
        return "alternating"
    if above:
        return "conservative"
    if below:
        return "anti-conservative"
    return "perfect"


def _max_loglik(objective, z0, n_starts, seed):
    z = _refit_from(objective, z0, n_starts, seed)
    return None if z is None else objective.loglik(z)


def _simulate(objective, z, rng):
    """Parametric replicate of the objective's data at free parameters ``z``."""
    from .inference import _MEAN  # local mean-model table
    full = objective.full(z)
    tu, inv = objective._tu, objective._inv
    m_u, _, _ = _MEAN[objective.model](full, tu, objective.rtol, objective.atol)
    sigma = math.exp(full[-1])
    logy = m_u[inv] - 0.5 * sigma ** 2 + sigma * rng.standard_normal(inv.size)
    d = objective.data
    return Dataset(d.times, np.exp(logy), name=d.name, input_day=d.input_day)


def _pp_chunk(objective, parameter, z_hat, true_value, log, indices, seed, n_starts):
    out = np.full(len(indices), np.nan)
    for k, b in enumerate(indices):
        rng = np.random.default_rng([seed, b])
        obj = objective.with_data(_simulate(objective, z_hat, rng))
        l_full = _max_loglik(obj, z_hat, n_starts, [seed, b, 1])
        sub = obj.fix(**{parameter: true_value})
        j = obj.free_names.index(parameter)
        l_con = _max_loglik(sub, np.delete(z_hat, j), n_starts, [seed, b, 2])
        if l_full is not None and l_con is not None:
            out[k] = max(2.0 * (l_full - l_con), 0.0)
    return out


def pp_calibration(data, model, parameter, n_boot=300, seed=0, fixed=None,
                   band_halfwidth=None, n_starts=20, refit_starts=1, jobs=1,
                   max_failure_rate=0.2):
    """Bootstrap distribution of the likelihood ratio for one parameter.

    Replicates are simulated from the fitted model (with its error model);
    each one is refitted freely and with ``parameter`` pinned at the fitted
    value, and ``2 (l_full - l_constrained)`` is recorded.  Fits here are
    unpenalised since the statistic is a likelihood ratio.
    """
    objective = Objective(model, data, fixed=fixed, l2_weight=0.0)
    if parameter not in objective.free_names:
        raise ValueError(f"{parameter!r} is not free")
    base = fit(objective, starts=n_starts, seed=seed)
    z_hat = base.z
    true_value = base.estimate[parameter]
    log = objective.spec.log[objective.spec.index(parameter)]
    chunks = np.array_split(np.arange(n_boot), max(1, jobs))
    args = (objective, parameter, z_hat, true_value, log)
    if jobs > 1:
        parts = Parallel(n_jobs=jobs)(
            delayed(_pp_chunk)(*args, c, seed, refit_starts) for c in chunks)
    else:
        parts = [_pp_chunk(*args, c, seed, refit_starts) for c in chunks]
    ratios = np.concatenate(parts)
    failed = int(np.isnan(ratios).sum())
    if failed > max_failure_rate * n_boot:
        raise ReliabilityError(f"{failed} of {n_boot} calibration refits failed")
    ratios = ratios[~np.isnan(ratios)]
    curve = PPCurve(parameter, np.sort(ratios), n_failed=failed)
    curve.band_halfwidth = (KS_BAND_95 / math.sqrt(ratios.size)
                            if band_halfwidth is None else band_halfwidth)
    curve.classification = classify_pp(curve, curve.band_halfwidth)
    return curve
