"""Exponential and logistic two-population growth dynamics.

Population 1 is the modified population, population 2 the untreated
control.  Both models are observed through the fraction of population 1
among all cells, ``eta(t) = x1 / (x1 + x2)``.

The exponential model has a closed-form solution and observable.  The
logistic model is integrated numerically with an adaptive Dormand-Prince
5(4) scheme written in numba; integration happens in log-coordinates
``u_k = log x_k`` so the states stay strictly positive.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numba
import numpy as np
from scipy.special import expit

__all__ = [
    "ExpParams",
    "ExpRawParams",
    "LogisticParams",
    "StateTrajectory",
    "InvalidParameterError",
    "IntegrationError",
    "solve_exponential",
    "solve_logistic",
    "observable",
    "observable_exponential_closed_form",
    "log_observable_exponential",
    "logistic_log_states",
]

# keeps eta inside the open unit interval so log(eta) stays finite
_ETA_LO = np.finfo(float).tiny
_ETA_HI = 1.0 - np.finfo(float).eps


class InvalidParameterError(ValueError):
    pass


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator cannot reach the requested time."""

    def __init__(self, message, last_time):
        super().__init__(f"{message} (last valid time {last_time:g})")
        self.last_time = last_time


def _check_finite(**values):
    for name, v in values.items():
        if not np.isfinite(v):
            raise InvalidParameterError(f"{name} must be finite, got {v!r}")


def _check_positive(**values):
    for name, v in values.items():
        _check_finite(**{name: v})
        if v <= 0:
            raise InvalidParameterError(f"{name} must be > 0, got {v!r}")


@dataclass(frozen=True)
class ExpParams:
    """Identifiable exponential parametrisation.

    theta1 is the relative net growth ``beta2 - beta1`` (per day), theta2
    the initial ratio ``x2(0) / x1(0)`` and theta3 the error scale sigma.
    """

    theta1: float
    theta2: float
    theta3: float

    def __post_init__(self):
        _check_finite(theta1=self.theta1)
        _check_positive(theta2=self.theta2, theta3=self.theta3)

    @classmethod
    def from_raw(cls, beta1, beta2, x1_0, x2_0, sigma):
        return ExpRawParams(beta1, beta2, x1_0, x2_0, sigma).reparametrise()

    @property
    def sigma(self):
        return self.theta3

    def as_array(self):
        return np.array([self.theta1, self.theta2, self.theta3])


@dataclass(frozen=True)
class ExpRawParams:
    beta1: float
    beta2: float
    x1_0: float
    x2_0: float
    sigma: float

    def __post_init__(self):
        _check_finite(beta1=self.beta1, beta2=self.beta2)
        _check_positive(x1_0=self.x1_0, x2_0=self.x2_0, sigma=self.sigma)

    def reparametrise(self):
        return ExpParams(self.beta2 - self.beta1, self.x2_0 / self.x1_0, self.sigma)

    def as_array(self):
        return np.array([self.beta1, self.beta2, self.x1_0, self.x2_0, self.sigma])


@dataclass(frozen=True)
class LogisticParams:
    lambda1: float
    lambda2: float
    capacity: float
    x1_0: float
    x2_0: float
    sigma: float

    def __post_init__(self):
        _check_finite(lambda1=self.lambda1, lambda2=self.lambda2)
        _check_positive(capacity=self.capacity, x1_0=self.x1_0, x2_0=self.x2_0,
                        sigma=self.sigma)
        if self.x1_0 + self.x2_0 >= self.capacity:
            raise InvalidParameterError(
                f"x1_0 + x2_0 = {self.x1_0 + self.x2_0:g} must be below the "
                f"carrying capacity {self.capacity:g}")

    def as_array(self):
        return np.array([self.lambda1, self.lambda2, self.capacity,
                         self.x1_0, self.x2_0, self.sigma])


@dataclass(frozen=True)
class StateTrajectory:
    """Cell numbers of both populations at ordered times (days).

    Deterministic solutions are strictly positive.  Jump-process paths
    from :mod:`growthtrials.simulation` may contain zeros (extinction), so
    only non-negativity is enforced here; :func:`observable` checks
    positivity.
    """

    times: np.ndarray
    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        x1 = np.asarray(self.x1, dtype=float)
        x2 = np.asarray(self.x2, dtype=float)
        if not (times.shape == x1.shape == x2.shape) or times.ndim != 1:
            raise ValueError("times, x1 and x2 must be 1-d arrays of equal length")
        if times.size and (times[0] < 0 or np.any(np.diff(times) <= 0)):
            raise ValueError("times must be >= 0 and strictly increasing")
        if np.any(x1 < 0) or np.any(x2 < 0):
            raise ValueError("cell numbers must be non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)

    def __len__(self):
        return self.times.size


def _as_times(times):
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1:
        raise ValueError("times must be one-dimensional")
    if t.size and (t[0] < 0 or np.any(np.diff(t) < 0)):
        raise ValueError("times must be sorted and non-negative")
    return t


def solve_exponential(params, times):
    """Analytic solution ``x_k(t) = x_k(0) exp(beta_k t)``.

    ``ExpParams`` carries only ratios, so it is mapped to the
    representative ``x1(0) = 1, beta1 = 0``.
    """
    t = _as_times(times)
    if isinstance(params, ExpParams):
        params = ExpRawParams(0.0, params.theta1, 1.0, params.theta2, params.theta3)
    elif not isinstance(params, ExpRawParams):
        params = ExpRawParams(*params)
    with np.errstate(over="raise"):
        try:
            x1 = params.x1_0 * np.exp(params.beta1 * t)
            x2 = params.x2_0 * np.exp(params.beta2 * t)
        except FloatingPointError as exc:
            raise InvalidParameterError("exponential solution overflows") from exc
    return StateTrajectory(t, x1, x2)


def observable(traj):
    """Fraction of population 1, clamped to the open unit interval."""
    x1, x2 = traj.x1, traj.x2
    if np.any(x1 <= 0) or np.any(x2 <= 0):
        raise ValueError("observable requires a strictly positive trajectory")
    eta = x1 / (x1 + x2)
    return np.clip(eta, _ETA_LO, _ETA_HI)


def log_observable_exponential(theta1, theta2, t):
    """``log eta(t)`` for the exponential model, overflow-safe."""
    u = np.log(theta2) + theta1 * np.asarray(t, dtype=float)
    return -np.logaddexp(0.0, u)


def observable_exponential_closed_form(theta1, theta2, t):
    """``1 / (1 + theta2 exp(theta1 t))``, never exactly 0 or 1."""
    if not theta2 > 0:
        raise InvalidParameterError(f"theta2 must be > 0, got {theta2!r}")
    u = np.log(theta2) + theta1 * np.asarray(t, dtype=float)
    return np.clip(expit(-u), _ETA_LO, _ETA_HI)


# ---------------------------------------------------------------------------
# logistic model: Dormand-Prince 5(4) in log-coordinates with forward
# sensitivities w.r.t. z = (lambda1, lambda2, log K, log x1_0, log x2_0)

N_SENS = 5

_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176,
                               -5103 / 18656)
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                                -17253 / 339200, 22 / 525, -1 / 40)


@numba.njit(cache=True)
def _logistic_rhs(y, lam1, lam2, logk, nsens, out):
    e1 = math.exp(y[0] - logk)
    e2 = math.exp(y[1] - logk)
    g = 1.0 - e1 - e2
    out[0] = lam1 * g
    out[1] = lam2 * g
    for j in range(nsens):
        s1 = y[2 + 2 * j]
        s2 = y[3 + 2 * j]
        dk = 1.0 if j == 2 else 0.0
        dg = -(e1 * (s1 - dk) + e2 * (s2 - dk))
        out[2 + 2 * j] = (g if j == 0 else 0.0) + lam1 * dg
        out[3 + 2 * j] = (g if j == 1 else 0.0) + lam2 * dg


@numba.njit(cache=True)
def _dopri_logistic(lam1, lam2, logk, u10, u20, times, rtol, atol, with_sens,
                    max_steps):
    nsens = N_SENS if with_sens else 0
    ny = 2 + 2 * nsens
    nt = times.shape[0]
    out = np.empty((nt, ny))
    y = np.zeros(ny)
    y[0] = u10
    y[1] = u20
    if with_sens:
        y[2 + 2 * 3] = 1.0  # d u1 / d log x1_0
        y[3 + 2 * 4] = 1.0  # d u2 / d log x2_0
    k1 = np.empty(ny)
    k2 = np.empty(ny)
    k3 = np.empty(ny)
    k4 = np.empty(ny)
    k5 = np.empty(ny)
    k6 = np.empty(ny)
    k7 = np.empty(ny)
    yt = np.empty(ny)
    ynew = np.empty(ny)
    t = 0.0
    _logistic_rhs(y, lam1, lam2, logk, nsens, k1)
    rate = abs(lam1) + abs(lam2) + 1e-12
    h = min(0.1 / rate, 1.0)
    steps = 0
    for i in range(nt):
        target = times[i]
        while t < target:
            if steps >= max_steps:
                return out, 1, t
            hmin = 1e-12 * max(1.0, abs(t))
            if target - t <= h:
                hs = target - t
                last = True
            else:
                hs = h
                last = False
            for m in range(ny):
                yt[m] = y[m] + hs * _A21 * k1[m]
            _logistic_rhs(yt, lam1, lam2, logk, nsens, k2)
            for m in range(ny):
                yt[m] = y[m] + hs * (_A31 * k1[m] + _A32 * k2[m])
            _logistic_rhs(yt, lam1, lam2, logk, nsens, k3)
            for m in range(ny):
                yt[m] = y[m] + hs * (_A41 * k1[m] + _A42 * k2[m] + _A43 * k3[m])
            _logistic_rhs(yt, lam1, lam2, logk, nsens, k4)
            for m in range(ny):
                yt[m] = y[m] + hs * (_A51 * k1[m] + _A52 * k2[m] + _A53 * k3[m]
                                     + _A54 * k4[m])
            _logistic_rhs(yt, lam1, lam2, logk, nsens, k5)
            for m in range(ny):
                yt[m] = y[m] + hs * (_A61 * k1[m] + _A62 * k2[m] + _A63 * k3[m]
                                     + _A64 * k4[m] + _A65 * k5[m])
            _logistic_rhs(yt, lam1, lam2, logk, nsens, k6)
            for m in range(ny):
                ynew[m] = y[m] + hs * (_B1 * k1[m] + _B3 * k3[m] + _B4 * k4[m]
                                       + _B5 * k5[m] + _B6 * k6[m])
            _logistic_rhs(ynew, lam1, lam2, logk, nsens, k7)
            err = 0.0
            finite = True
            for m in range(ny):
                if not math.isfinite(ynew[m]):
                    finite = False
                e = hs * (_E1 * k1[m] + _E3 * k3[m] + _E4 * k4[m] + _E5 * k5[m]
                          + _E6 * k6[m] + _E7 * k7[m])
                sc = atol + rtol * max(abs(y[m]), abs(ynew[m]))
                err += (e / sc) ** 2
            err = math.sqrt(err / ny)
            steps += 1
            if finite and err <= 1.0:
                t = target if last else t + hs
                for m in range(ny):
                    y[m] = ynew[m]
                    k1[m] = k7[m]
                fac = 10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
                if not last or fac < 1.0:
                    h = hs * fac
            else:
                fac = 0.2 if not finite else max(0.2, 0.9 * err ** -0.2)
                h = hs * fac
                if h < hmin:
                    return out, 2, t
        for m in range(ny):
            out[i, m] = y[m]
    return out, 0, t


def logistic_log_states(lambda1, lambda2, log_capacity, log_x1_0, log_x2_0, times,
                        rtol=1e-8, atol=1e-8, sensitivities=False,
                        max_steps=200_000):
    """Integrate the logistic model in log-coordinates.

    Returns an array of shape ``(len(times), 2)`` with ``log x1, log x2``;
    with ``sensitivities=True`` a second array of shape
    ``(len(times), 2, 5)`` holds ``d log x_k / d z_j`` for
    ``z = (lambda1, lambda2, log K, log x1_0, log x2_0)``.

    ``atol`` applies to the log-states, i.e. it bounds the relative error
    of the cell numbers.
    """
    t = _as_times(times)
    out, status, t_last = _dopri_logistic(float(lambda1), float(lambda2),
                                          float(log_capacity), float(log_x1_0),
                                          float(log_x2_0), t, float(rtol),
                                          float(atol), bool(sensitivities),
                                          int(max_steps))
    if status == 1:
        raise IntegrationError("step limit exceeded", t_last)
    if status == 2:
        raise IntegrationError("step size underflow", t_last)
    logs = out[:, :2]
    if not np.all(np.isfinite(logs)):
        raise IntegrationError("non-finite state", t_last)
    if not sensitivities:
        return logs
    sens = out[:, 2:].reshape(t.size, N_SENS, 2).transpose(0, 2, 1)
    return logs, sens


def solve_logistic(params, times, rtol=1e-8, atol=1e-8):
    """Adaptive numerical solution of the coupled logistic model."""
    if not isinstance(params, LogisticParams):
        params = LogisticParams(*params)
    logs = logistic_log_states(params.lambda1, params.lambda2,
                               math.log(params.capacity), math.log(params.x1_0),
                               math.log(params.x2_0), times, rtol=rtol, atol=atol)
    x = np.exp(logs)
    return StateTrajectory(_as_times(times), x[:, 0], x[:, 1])
