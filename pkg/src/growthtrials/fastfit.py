"""Compiled refits for the logistic model.

Bootstrap and calibration loops refit the logistic model hundreds of
times per dataset.  This module runs the penalised objective (with its
Gauss-Newton Hessian) and the trust-region iteration inside a single
numba kernel, mirroring :func:`growthtrials.optimize.trust_region`.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .models import _dopri_logistic

__all__ = ["logistic_refit"]

_LOG_2PI = math.log(2.0 * math.pi)


@numba.njit(cache=True)
def _fgh(zf, free_idx, z_template, tu, inv, logy, l2, rtol, atol):
    z = z_template.copy()
    for i in range(free_idx.size):
        z[free_idx[i]] = zf[i]
    nf = free_idx.size
    g = np.zeros(nf)
    H = np.eye(nf)
    if math.exp(z[3]) + math.exp(z[4]) >= math.exp(z[2]):
        return np.nan, g, H
    out, status, _ = _dopri_logistic(z[0], z[1], z[2], z[3], z[4], tu, rtol, atol,
                                     True, 200000)
    if status != 0:
        return np.nan, g, H
    nt = tu.size
    m_u = np.empty(nt)
    J_u = np.zeros((nt, 6))
    for k in range(nt):
        u1 = out[k, 0]
        u2 = out[k, 1]
        if not (math.isfinite(u1) and math.isfinite(u2)):
            return np.nan, g, H
        hi = max(u1, u2)
        lse = hi + math.log(math.exp(u1 - hi) + math.exp(u2 - hi))
        m_u[k] = u1 - lse
        q = -math.expm1(m_u[k])
        for j in range(5):
            J_u[k, j] = q * (out[k, 2 + 2 * j] - out[k, 3 + 2 * j])
    s = z[5]
    sig2 = math.exp(2.0 * s)
    n = logy.size
    p = 6
    rss = 0.0
    sum_r = 0.0
    Jr = np.zeros(p)
    J1 = np.zeros(p)
    JJ = np.zeros((p, p))
    for i in range(n):
        k = inv[i]
        r = logy[i] - m_u[k] + 0.5 * sig2
        rss += r * r
        sum_r += r
        for a in range(5):
            Jr[a] += J_u[k, a] * r
            J1[a] += J_u[k, a]
            for b in range(a, 5):
                JJ[a, b] += J_u[k, a] * J_u[k, b]
    f = n * s + 0.5 * n * _LOG_2PI + 0.5 * rss / sig2
    gfull = np.empty(p)
    Hfull = np.empty((p, p))
    for a in range(5):
        gfull[a] = -Jr[a] / sig2
        for b in range(a, 5):
            Hfull[a, b] = JJ[a, b] / sig2
            Hfull[b, a] = Hfull[a, b]
        hms = -J1[a] + 2.0 * Jr[a] / sig2
        Hfull[a, 5] = hms
        Hfull[5, a] = hms
    gfull[5] = n + sum_r - rss / sig2
    Hfull[5, 5] = n * sig2 - 2.0 * sum_r + 2.0 * rss / sig2
    pen = 0.0
    for i in range(nf):
        a = free_idx[i]
        pen += zf[i] * zf[i]
        g[i] = gfull[a] + 2.0 * l2 * zf[i]
        for j in range(nf):
            H[i, j] = Hfull[a, free_idx[j]]
        H[i, i] += 2.0 * l2
    return f + l2 * pen, g, H


@numba.njit(cache=True)
def _subproblem(g, H, radius):
    lam, Q = np.linalg.eigh(H)
    a = Q.T @ g
    lam_min = lam[0]
    if lam_min > 0:
        s = -(Q @ (a / lam))
        if np.sqrt(np.sum(s * s)) <= radius:
            return s
    lo = max(0.0, -lam_min)
    amax = np.max(np.abs(a))
    if abs(a[0]) < 1e-12 * (amax + 1e-300) and lam_min <= 0:
        d = lam - lam_min
        coef = np.zeros_like(a)
        for i in range(a.size):
            if abs(d[i]) > 1e-14 * (1 + abs(lam_min)):
                coef[i] = -a[i] / d[i]
        n2 = np.sum(coef * coef)
        if n2 <= radius * radius:
            coef[0] = math.sqrt(radius * radius - n2)
            return Q @ coef
    hi = lo + np.sum(np.abs(a)) / radius + abs(lam_min) + 1.0
    while np.sqrt(np.sum((a / (lam + hi)) ** 2)) > radius:
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
        dnrm = -np.sum(a * a / d ** 3) / nrm
        step = (nrm - radius) / radius * nrm / dnrm if dnrm != 0 else 0.0
        cand = mu - step
        mu = cand if lo < cand < hi else 0.5 * (lo + hi)
    return -(Q @ (a / (lam + mu)))


@numba.njit(cache=True)
def _stalled_ok(x, g, H, lower, gtol, stall_gtol, stall_decrement):
    n = x.size
    pg = g.copy()
    for i in range(n):
        if x[i] <= lower[i] and g[i] > 0:
            pg[i] = 0.0
    if np.max(np.abs(pg)) < max(gtol, stall_gtol):
        return True
    idx = np.flatnonzero(pg != 0.0)
    lam, Q = np.linalg.eigh(H[idx][:, idx])
    if lam[0] <= 0:
        return False
    a = Q.T @ pg[idx]
    return np.sum(a * a / lam) < stall_decrement


@numba.njit(cache=True)
def _trust_region(x0, free_idx, z_template, tu, inv, logy, l2, lower, rtol, atol,
                  gtol, xtol, stall_gtol, stall_decrement, max_iter):
    n = x0.size
    x = np.maximum(x0, lower)
    fx, g, H = _fgh(x, free_idx, z_template, tu, inv, logy, l2, rtol, atol)
    if not math.isfinite(fx):
        return x, fx, False
    radius = 1.0
    for _ in range(max_iter):
        pg = g.copy()
        free = np.ones(n, dtype=np.bool_)
        for i in range(n):
            if x[i] <= lower[i] and g[i] > 0:
                pg[i] = 0.0
                free[i] = False
        if np.max(np.abs(pg)) < gtol:
            return x, fx, True
        idx = np.flatnonzero(free)
        s = np.zeros(n)
        sub = _subproblem(g[idx], H[idx][:, idx], radius)
        for k in range(idx.size):
            s[idx[k]] = sub[k]
        trial = np.maximum(x + s, lower)
        s = trial - x
        pred = -(g @ s + 0.5 * s @ (H @ s))
        ft, gt, Ht = _fgh(trial, free_idx, z_template, tu, inv, logy, l2, rtol, atol)
        if not math.isfinite(ft) or pred <= 0:
            rho = -np.inf
        else:
            rho = (fx - ft) / pred
        snorm = np.sqrt(np.sum(s * s))
        if rho < 0.25:
            radius = 0.25 * (snorm if math.isfinite(rho) else radius)
        elif rho > 0.75 and snorm > 0.8 * radius:
            radius = min(2.0 * radius, 100.0)
        if rho > 1e-4:
            df = fx - ft
            x, fx, g, H = trial, ft, gt, Ht
            if snorm < xtol * (1.0 + np.sqrt(np.sum(x * x))) or df < 1e-15 * (1.0 + abs(fx)):
                return x, fx, _stalled_ok(x, g, H, lower, gtol, stall_gtol, stall_decrement)
        if radius < 1e-14:
            return x, fx, _stalled_ok(x, g, H, lower, gtol, stall_gtol, stall_decrement)
    return x, fx, False


def logistic_refit(objective, x0, gtol=1e-8, xtol=1e-8, stall_gtol=1e-4,
                   stall_decrement=1e-9, max_iter=500):
    """Compiled equivalent of ``trust_region(objective.value_grad_hess, x0)``.

    Returns ``(x, fun, converged)``.  Only valid for logistic objectives.
    """
    if objective.model != "logistic":
        raise ValueError("logistic_refit needs a logistic objective")
    return _trust_region(np.asarray(x0, float), objective.free_idx.astype(np.int64),
                         objective._z_template, objective._tu,
                         objective._inv.astype(np.int64), objective._logy,
                         objective.l2_weight, objective.lower_bounds(), objective.rtol,
                         objective.atol, gtol, xtol, stall_gtol, stall_decrement,
                         max_iter)
