"""Profile likelihoods, likelihood-based confidence regions and
identifiability classification.

Scans run in the transformed coordinate of the profiled parameter (log
scale for positive parameters).  Confidence regions are reported on the
natural scale; for log-transformed parameters an open lower end maps to 0.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .optimize import trust_region

__all__ = [
    "DELTA_CHI1SQ",
    "DELTA_CANTELLI",
    "threshold",
    "ScanPolicy",
    "ProfileCurve",
    "ConfidenceRegion",
    "IdentifiabilityVerdict",
    "ProfileResult",
    "profile",
    "confidence_region",
    "classify_identifiability",
    "profile_parameters",
    "parse_region",
    "curves_to_csv",
]

DELTA_CHI1SQ = 3.84
DELTA_CANTELLI = 7.16

STRUCTURAL = "structural-non-identifiable"
PRACTICAL = "practical-non-identifiable"
IDENTIFIABLE = "identifiable"


def threshold(kind="chi1sq", alpha=0.05):
    """Deviance threshold for a (1 - alpha) likelihood-based region.

    ``chi1sq`` is the chi-square(1) quantile and ``cantelli`` the
    distribution-free one-sided Chebyshev bound ``1 + sqrt(2 (1/alpha - 1))``,
    both rounded to two decimals (3.84 and 7.16 at alpha = 0.05).
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if kind == "chi1sq":
        return round(float(chi2.ppf(1 - alpha, 1)), 2)
    if kind == "cantelli":
        return round(1.0 + math.sqrt(2.0 * (1.0 / alpha - 1.0)), 2)
    raise ValueError(f"unknown threshold kind {kind!r}")


# ---------------------------------------------------------------------------
# scanning


@dataclass(frozen=True)
class ScanPolicy:
    """Step control for profile scans (all lengths in transformed units).

    Steps adapt so that consecutive grid points differ by about
    ``target_fraction * delta`` in deviance.  A direction ends once the
    deviance exceeds ``stop_deviance``; if ``travel_cap`` is reached first
    the end is declared open.
    """

    delta: float = DELTA_CANTELLI
    target_fraction: float = 0.2
    stop_deviance: float = 10.0
    travel_cap: float = 20.0
    max_step: float = 4.0
    min_step: float = 1e-4
    max_points: int = 400
    refine: int = 1

    def finer(self, factor=2):
        return ScanPolicy(self.delta, self.target_fraction / factor, self.stop_deviance,
                          self.travel_cap, self.max_step / factor, self.min_step,
                          self.max_points * factor, self.refine)


@dataclass
class ProfileCurve:
    parameter: str
    grid: np.ndarray             # natural scale
    profile_loglik: np.ndarray
    mle_value: float
    mle_loglik: float
    log_scale: bool = False
    scan_coords: np.ndarray = field(default=None, repr=False)
    open_lower: bool = False
    open_upper: bool = False
    truncated_lower: bool = False
    truncated_upper: bool = False
    nuisance: np.ndarray = field(default=None, repr=False)

    @property
    def deviance(self):
        return 2.0 * (self.mle_loglik - self.profile_loglik)

    @property
    def truncated(self):
        return self.truncated_lower or self.truncated_upper

    @property
    def flatness(self):
        return float(np.ptp(self.profile_loglik)) if self.grid.size else 0.0

    def rows(self):
        return [(self.parameter, float(q), float(p))
                for q, p in zip(self.grid, self.profile_loglik)]


def _standard_error(objective, z):
    _, _, H = objective.value_grad_hess(z)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(z.size, np.nan)
    d = np.diag(cov)
    return np.sqrt(np.where(d > 0, d, np.nan))


def _refit(objective, x0):
    if objective.n_free == 0:
        value = objective.negloglik(np.empty(0))
        return np.empty(0), value, np.isfinite(value)
    res = trust_region(objective.value_grad_hess, x0, lower=objective.lower_bounds(),
                       gtol=1e-8, xtol=1e-10, max_iter=500)
    ok = res.converged and np.isfinite(res.fun)
    return res.x, float(res.fun), ok


def _polish_mle(objective, z0):
    """Unpenalised optimum reached from ``z0``."""
    res = trust_region(objective.value_grad_hess, z0, lower=objective.lower_bounds(),
                       gtol=1e-9, xtol=1e-12, max_iter=500)
    if np.isfinite(res.fun) and res.fun <= objective.value(z0):
        return res.x, float(res.fun)
    return np.asarray(z0, float), float(objective.value(z0))


def _scan_direction(objective, j, name, log, z_hat, f_hat, step0, sign, policy):
    """Walk from the optimum in one direction; returns points and end flags."""
    rest_idx = [i for i in range(z_hat.size) if i != j]
    warm = z_hat[rest_idx].copy()
    prev_x, prev_s = warm, z_hat[j]
    s_prev, dev_prev = z_hat[j], 0.0
    step = step0
    pts = []
    open_end = truncated = False
    retries = 0
    while len(pts) < policy.max_points:
        s = s_prev + sign * step
        travelled = abs(s - z_hat[j])
        at_cap = travelled >= policy.travel_cap
        if at_cap:
            s = z_hat[j] + sign * policy.travel_cap
        fixed_val = math.exp(s) if log else s
        sub = objective.fix(**{name: fixed_val})
        # linear extrapolation of the nuisance path along flat directions
        guess = warm
        if pts and s_prev != prev_s:
            guess = warm + (warm - prev_x) * (s - s_prev) / (s_prev - prev_s)
        x, fval, ok = _refit(sub, guess)
        if not ok and guess is not warm:
            x, fval, ok = _refit(sub, warm)
        if not ok:
            # second chance from the unconstrained optimum's nuisance values
            x2, f2, ok2 = _refit(sub, z_hat[rest_idx])
            if ok2:
                x, fval, ok = x2, f2, True
        if not ok and retries < 6 and step > policy.min_step:
            # shorter step before giving up on this direction
            retries += 1
            step = max(step / 4.0, policy.min_step)
            continue
        if not ok:
            truncated = True
            break
        retries = 0
        dev = 2.0 * (fval - f_hat)
        pts.append((s, -fval, x.copy()))
        prev_x, prev_s = warm, s_prev
        warm = x
        if dev > policy.stop_deviance:
            break
        if at_cap:
            open_end = True
            break
        change = abs(dev - dev_prev)
        target = policy.target_fraction * policy.delta
        factor = 2.0 if change <= 0 else float(np.clip(target / change, 0.5, 2.0))
        step = float(np.clip(step * factor, policy.min_step, policy.max_step))
        s_prev, dev_prev = s, dev
    else:
        open_end = True
    return pts, open_end, truncated


def profile(parameter, fit, objective, scan=None):
    """Profile likelihood of ``parameter`` around a fitted optimum.

    The L2 penalty of ``objective`` is dropped.  The optimum is first
    polished without the penalty; every grid point re-optimises the
    remaining free parameters warm-started from its neighbour.
    """
    scan = scan or ScanPolicy()
    obj = objective.with_penalty(0.0)
    names = obj.free_names
    if parameter not in names:
        raise ValueError(f"{parameter!r} is not a free parameter of this objective")
    j = names.index(parameter)
    log = bool(obj.spec.log[obj.spec.index(parameter)])
    z0 = np.asarray(fit.z if fit.z is not None else
                    obj.free_from_natural(fit.estimate.values), float)
    z_hat, f_hat = _polish_mle(obj, z0)

    se = _standard_error(obj, z_hat)[j]
    step0 = se * math.sqrt(scan.target_fraction * scan.delta) if np.isfinite(se) else 0.1
    step0 = float(np.clip(step0, 1e-3, scan.max_step))

    lo_pts, open_lo, trunc_lo = _scan_direction(obj, j, parameter, log, z_hat, f_hat,
                                                step0, -1.0, scan)
    hi_pts, open_hi, trunc_hi = _scan_direction(obj, j, parameter, log, z_hat, f_hat,
                                                step0, 1.0, scan)
    centre = (z_hat[j], -f_hat, np.delete(z_hat, j))
    pts = lo_pts[::-1] + [centre] + hi_pts
    s = np.array([p[0] for p in pts])
    pl = np.array([p[1] for p in pts])
    nuis = np.array([p[2] for p in pts]) if obj.n_free > 1 else None
    mle_ll = max(-f_hat, float(pl.max()))
    return ProfileCurve(parameter, np.exp(s) if log else s, pl,
                        float(math.exp(z_hat[j]) if log else z_hat[j]), mle_ll,
                        log, s, open_lo, open_hi, trunc_lo, trunc_hi, nuis)


# ---------------------------------------------------------------------------
# confidence regions


def _fmt(x):
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return repr(float(x))


@dataclass(frozen=True)
class ConfidenceRegion:
    """Union of sorted, disjoint closed intervals (ends may be infinite)."""

    pieces: tuple
    threshold_kind: str = "chi1sq"
    delta: float = DELTA_CHI1SQ
    level: float = 0.95
    domain: str = "real"

    def __post_init__(self):
        pieces = tuple((float(a), float(b)) for a, b in self.pieces)
        for a, b in pieces:
            if not a <= b or math.isnan(a) or math.isnan(b):
                raise ValueError(f"invalid interval [{a}, {b}]")
        for (a0, b0), (a1, b1) in zip(pieces, pieces[1:]):
            if not b0 < a1:
                raise ValueError("pieces must be sorted and disjoint")
        object.__setattr__(self, "pieces", pieces)

    @property
    def lower(self):
        return self.pieces[0][0] if self.pieces else math.nan

    @property
    def upper(self):
        return self.pieces[-1][1] if self.pieces else math.nan

    @property
    def bounded(self):
        if not self.pieces:
            return False
        lo_ok = self.lower > 0 if self.domain == "positive" else math.isfinite(self.lower)
        return lo_ok and math.isfinite(self.upper)

    def contains(self, x):
        return any(a <= x <= b for a, b in self.pieces)

    def __contains__(self, x):
        return self.contains(x)

    @property
    def excludes_zero(self):
        return not self.contains(0.0)

    @property
    def positive(self):
        """Region is a subset of the positive reals."""
        return bool(self.pieces) and self.lower > 0

    @property
    def negative(self):
        """Region is a subset of the negative reals."""
        return bool(self.pieces) and self.upper < 0

    def issubset(self, other):
        return all(any(c <= a and b <= d for c, d in other.pieces) for a, b in self.pieces)

    def __str__(self):
        def one(a, b):
            left = "(" if math.isinf(a) else "["
            right = ")" if math.isinf(b) else "]"
            return f"{left}{_fmt(a)}, {_fmt(b)}{right}"
        return " U ".join(one(a, b) for a, b in self.pieces) if self.pieces else "{}"

    # CSV: one row per piece
    FIELDS = ("parameter", "piece", "lower", "upper", "threshold_kind", "delta",
              "level", "domain")

    def to_rows(self, parameter=""):
        return [{"parameter": parameter, "piece": i, "lower": _fmt(a), "upper": _fmt(b),
                 "threshold_kind": self.threshold_kind, "delta": repr(self.delta),
                 "level": repr(self.level), "domain": self.domain}
                for i, (a, b) in enumerate(self.pieces)]

    def to_csv(self, parameter=""):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.to_rows(parameter))
        return buf.getvalue()

    @classmethod
    def from_rows(cls, rows):
        rows = sorted(rows, key=lambda r: int(r["piece"]))
        if not rows:
            raise ValueError("no rows")
        r0 = rows[0]
        return cls(tuple((float(r["lower"]), float(r["upper"])) for r in rows),
                   r0["threshold_kind"], float(r0["delta"]), float(r0["level"]),
                   r0["domain"])

    @classmethod
    def from_csv(cls, text):
        """Regions keyed by parameter name."""
        grouped = {}
        for row in csv.DictReader(io.StringIO(text)):
            grouped.setdefault(row["parameter"], []).append(row)
        return {p: cls.from_rows(rows) for p, rows in grouped.items()}


_PIECE = re.compile(r"([\[(])\s*([^,\s]+)\s*,\s*([^\])\s]+)\s*([\])])")


def parse_region(text, threshold_kind="cantelli", delta=DELTA_CANTELLI, level=0.95):
    """Parse interval notation such as ``(-inf, -0.286] U [-0.007, inf)``.

    Unicode minus signs and the union symbol are accepted; trailing
    significance markers (``*``) are ignored.
    """
    t = (text.replace("−", "-").replace("∪", "U").replace("∞", "inf")
         .replace("*", ""))
    pieces = [(float(a), float(b)) for _, a, b, _ in _PIECE.findall(t)]
    if not pieces:
        raise ValueError(f"cannot parse interval {text!r}")
    return ConfidenceRegion(tuple(pieces), threshold_kind, delta, level)


def _crossing(q0, d0, q1, d1, delta):
    if d1 == d0:
        return q0
    return q0 + (delta - d0) * (q1 - q0) / (d1 - d0)


def confidence_region(curve, delta=DELTA_CHI1SQ, threshold_kind=None, level=None):
    """Region ``{q : 2 (l_hat - PL(q)) <= delta}`` from a scanned curve.

    Crossings are interpolated linearly in (q, deviance) on the natural
    scale.  Runs of in-region points that reach an open or truncated scan
    end extend to infinity (to zero for log-scale parameters).
    """
    if curve.grid.size == 0:
        raise ValueError("empty profile curve")
    if threshold_kind is None:
        threshold_kind = {DELTA_CHI1SQ: "chi1sq", DELTA_CANTELLI: "cantelli"}.get(
            delta, "custom")
    if level is None:
        level = 0.95 if threshold_kind in ("chi1sq", "cantelli") else float(
            chi2.cdf(delta, 1))
    q = curve.grid
    dev = curve.deviance
    inside = dev <= delta
    low_end = 0.0 if curve.log_scale else -math.inf
    pieces = []
    i, n = 0, q.size
    while i < n:
        if not inside[i]:
            i += 1
            continue
        k = i
        while k + 1 < n and inside[k + 1]:
            k += 1
        # an in-region scan end means the threshold was never crossed there
        if i == 0:
            a = low_end
        else:
            a = _crossing(q[i - 1], dev[i - 1], q[i], dev[i], delta)
        if k == n - 1:
            b = math.inf
        else:
            b = _crossing(q[k], dev[k], q[k + 1], dev[k + 1], delta)
        pieces.append((float(a), float(b)))
        i = k + 1
    # merge touching pieces produced by interpolation round-off
    merged = []
    for a, b in pieces:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
        else:
            merged.append((a, b))
    return ConfidenceRegion(tuple(merged), threshold_kind, float(delta), float(level),
                            "positive" if curve.log_scale else "real")


@dataclass(frozen=True)
class IdentifiabilityVerdict:
    kind: str
    evidence: str

    @property
    def identifiable(self):
        return self.kind == IDENTIFIABLE


def classify_identifiability(curve, region, flat_tol=1e-3):
    """Structural if the profile is flat, practical if the region is open."""
    if curve.flatness < flat_tol:
        return IdentifiabilityVerdict(STRUCTURAL, f"profile range {curve.flatness:.3g}")
    if not region.bounded:
        sides = []
        if region.domain == "positive" and region.lower <= 0 or math.isinf(region.lower):
            sides.append("lower")
        if math.isinf(region.upper):
            sides.append("upper")
        return IdentifiabilityVerdict(PRACTICAL, "open " + " and ".join(sides))
    return IdentifiabilityVerdict(IDENTIFIABLE, f"bounded {region}")


@dataclass
class ProfileResult:
    curve: ProfileCurve
    region: ConfidenceRegion
    verdict: IdentifiabilityVerdict


def profile_parameters(fit, objective, parameters=None, delta=DELTA_CHI1SQ, scan=None,
                       flat_tol=1e-3):
    """Profile, region and verdict for each requested free parameter."""
    parameters = parameters or objective.free_names
    scan = scan or ScanPolicy(delta=max(delta, DELTA_CHI1SQ),
                              stop_deviance=max(10.0, 1.3 * delta))
    out = {}
    for name in parameters:
        curve = profile(name, fit, objective, scan)
        region = confidence_region(curve, delta)
        out[name] = ProfileResult(curve, region,
                                  classify_identifiability(curve, region, flat_tol))
    return out


def curves_to_csv(curves):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "q", "profile_loglik"])
    for c in curves:
        for p, q, v in c.rows():
            w.writerow([p, repr(q), repr(v)])
    return buf.getvalue()
