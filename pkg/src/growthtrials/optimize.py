"""Small dense trust-region minimiser.

The parameter vectors here have at most six components, so the
trust-region subproblem is solved exactly through an eigendecomposition
of the model Hessian (More-Sorensen style secular equation).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    nit: int
    nfev: int
    converged: bool
    message: str
    at_bound: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))


def _subproblem(g, H, radius):
    """Minimise ``g.s + s.H.s / 2`` subject to ``|s| <= radius``."""
    lam, Q = np.linalg.eigh(H)
    a = Q.T @ g
    lam_min = lam[0]
    if lam_min > 0:
        s = -(Q @ (a / lam))
        if np.linalg.norm(s) <= radius:
            return s
    # secular equation |s(mu)| = radius for mu > max(0, -lam_min)
    lo = max(0.0, -lam_min)
    scale = np.abs(a).sum() / radius + abs(lam_min) + 1.0

    def norm_at(mu):
        d = lam + mu
        return np.sqrt(np.sum((a / d) ** 2))

    hard = abs(a[0]) < 1e-12 * (np.abs(a).max() + 1e-300)
    if hard and lam_min <= 0:
        mu = -lam_min
        d = lam + mu
        mask = np.abs(d) > 1e-14 * (1 + abs(lam_min))
        coef = np.zeros_like(a)
        coef[mask] = -a[mask] / d[mask]
        n2 = np.sum(coef ** 2)
        if n2 <= radius ** 2:
            coef[0] = np.sqrt(radius ** 2 - n2)
            return Q @ coef
    hi = lo + scale
    while norm_at(hi) > radius:
        hi = lo + 2 * (hi - lo)
    mu = hi
    for _ in range(100):
        d = lam + mu
        nrm = np.sqrt(np.sum((a / d) ** 2))
        if abs(nrm - radius) <= 1e-10 * radius:
            break
        if nrm > radius:
            lo = mu
        else:
            hi = mu
        # Newton step on 1/|s| - 1/radius
        dnrm = -np.sum(a ** 2 / d ** 3) / nrm
        step = (nrm - radius) / radius * nrm / dnrm if dnrm != 0 else 0.0
        cand = mu - step
        mu = cand if lo < cand < hi else 0.5 * (lo + hi)
    return -(Q @ (a / (lam + mu)))


def _newton_decrement(pg, H):
    """``pg' H^-1 pg`` over components with nonzero projected gradient;
    infinite unless that block of ``H`` is positive definite."""
    idx = np.flatnonzero(pg)
    if idx.size == 0:
        return 0.0
    try:
        c = np.linalg.cholesky(H[np.ix_(idx, idx)])
    except np.linalg.LinAlgError:
        return np.inf
    y = np.linalg.solve(c, pg[idx])
    return float(y @ y)


def trust_region(fgh, x0, f=None, lower=None, gtol=1e-8, xtol=1e-8, max_iter=500,
                 radius=1.0, max_radius=100.0, stall_gtol=1e-4, stall_decrement=1e-9):
    """Minimise with a second-order trust-region method.

    ``fgh(x)`` returns ``(f, g, H)``; ``f(x)`` (optional) returns the
    value only and is used to test trial points cheaply.  ``lower`` gives
    per-component lower bounds (``-inf`` for none), handled by projection.
    When progress stalls (tiny steps or a collapsed radius, typically from
    ODE round-off), the point still counts as converged if the projected
    gradient is below ``stall_gtol`` or the Newton decrement over the free
    components is below ``stall_decrement`` (a scale-free test that covers
    objectives with huge curvature, e.g. noise-free data with sigma at its
    floor).
    """
    x = np.array(x0, dtype=float)
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    x = np.maximum(x, lower)
    fx, g, H = fgh(x)
    nfev = 1
    if not np.isfinite(fx) or not np.all(np.isfinite(g)):
        return OptimizeResult(x, fx, g, 0, nfev, False, "non-finite start")

    def projected(x, g):
        pg = g.copy()
        pg[(x <= lower) & (g > 0)] = 0.0
        return pg

    def stalled_ok(x, g, H):
        pg = projected(x, g)
        if np.max(np.abs(pg)) < max(gtol, stall_gtol):
            return True
        return _newton_decrement(pg, H) < stall_decrement

    message = "iteration limit"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pg = projected(x, g)
        if np.max(np.abs(pg)) < gtol:
            converged, message = True, "gradient tolerance"
            break
        free = ~((x <= lower) & (g > 0))
        s = np.zeros(n)
        if np.all(free):
            s = _subproblem(g, H, radius)
        else:
            idx = np.flatnonzero(free)
            s[idx] = _subproblem(g[idx], H[np.ix_(idx, idx)], radius)
        trial = np.maximum(x + s, lower)
        s = trial - x
        pred = -(g @ s + 0.5 * s @ H @ s)
        if f is not None:
            ft = f(trial)
            gt = Ht = None
        else:
            ft, gt, Ht = fgh(trial)
        nfev += 1
        if not np.isfinite(ft) or pred <= 0:
            rho = -np.inf
        else:
            rho = (fx - ft) / pred
        snorm = np.linalg.norm(s)
        if rho < 0.25:
            radius = 0.25 * (snorm if np.isfinite(rho) else radius)
        elif rho > 0.75 and snorm > 0.8 * radius:
            radius = min(2.0 * radius, max_radius)
        if rho > 1e-4:
            if gt is None:
                ft, gt, Ht = fgh(trial)
                nfev += 1
            df = fx - ft
            x, fx, g, H = trial, ft, gt, Ht
            if snorm < xtol * (1.0 + np.linalg.norm(x)) or df < 1e-15 * (1.0 + abs(fx)):
                converged = stalled_ok(x, g, H)
                message = "small step" if converged else "stalled"
                break
        if radius < 1e-14:
            converged = stalled_ok(x, g, H)
            message = "trust radius collapsed"
            break
    return OptimizeResult(x, fx, g, it, nfev, converged, message, x <= lower)
