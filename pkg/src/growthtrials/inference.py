"""Log-normal likelihood and multi-start maximum-likelihood fitting.

Measurements are modelled as ``y = eta(t) * eps`` with
``log eps ~ N(-sigma^2 / 2, sigma^2)``, so the log-residual
``log y - log eta + sigma^2 / 2`` is centred normal with scale sigma.

All optimisation happens in transformed coordinates: positive components
(ratios, initial cell numbers, capacity, sigma) are log-transformed, the
growth rates are left as they are.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.stats import qmc

from .models import (ExpParams, ExpRawParams, IntegrationError, LogisticParams,
                     logistic_log_states)
from .optimize import trust_region

__all__ = [
    "MODELS",
    "ModelSpec",
    "Dataset",
    "ParamVector",
    "Objective",
    "FitResult",
    "FitError",
    "StartPolicy",
    "log_likelihood",
    "fit",
    "gradient",
    "initial_guess",
]

LOG_2PI = math.log(2.0 * math.pi)


class FitError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class ModelSpec:
    name: str
    names: tuple
    log: tuple

    @property
    def size(self):
        return len(self.names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"model {self.name!r} has no parameter {name!r}") from None

    def to_transformed(self, values):
        v = np.asarray(values, dtype=float)
        return np.where(self.log, np.log(np.where(self.log, v, 1.0)), v)

    def to_natural(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(self.log, np.exp(np.where(self.log, z, 0.0)), z)


MODELS = {
    "exp": ModelSpec("exp", ("theta1", "theta2", "theta3"), (False, True, True)),
    "exp_raw": ModelSpec("exp_raw", ("beta1", "beta2", "x1_0", "x2_0", "sigma"),
                         (False, False, True, True, True)),
    "logistic": ModelSpec("logistic",
                          ("lambda1", "lambda2", "capacity", "x1_0", "x2_0", "sigma"),
                          (False, False, True, True, True, True)),
}


def _spec(model):
    if isinstance(model, ModelSpec):
        return model
    try:
        return MODELS[model]
    except KeyError:
        raise KeyError(f"unknown model {model!r}; choose from {sorted(MODELS)}") from None


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Dataset:
    """Concentration measurements of one experiment.

    ``mouse_ids`` is optional.  When given, the design is paired: every
    mouse contributes exactly one input record (at ``input_day``) and at
    most one output record.
    """

    times: np.ndarray
    values: np.ndarray
    mouse_ids: tuple | None = None
    sgrna_ids: tuple | None = None
    name: str = ""
    input_day: float = 0.0
    flags: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        y = np.asarray(self.values, dtype=float).ravel()
        if t.shape != y.shape:
            raise ValueError("times and values differ in length")
        if np.any(~np.isfinite(t)) or np.any(t < 0):
            raise ValueError("times must be finite and >= 0")
        if np.any(~np.isfinite(y)) or np.any(y <= 0):
            raise ValueError("values must be finite and strictly positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)
        for attr in ("mouse_ids", "sgrna_ids"):
            labels = getattr(self, attr)
            if labels is not None:
                labels = tuple(labels)
                if len(labels) != t.size:
                    raise ValueError(f"{attr} length differs from the number of records")
                object.__setattr__(self, attr, labels)
        object.__setattr__(self, "flags", tuple(self.flags))
        if self.mouse_ids is not None:
            self._check_pairing()

    def _check_pairing(self):
        seen = set()
        inputs, outputs = {}, {}
        for m, t in zip(self.mouse_ids, self.times):
            if (m, t) in seen:
                raise ValueError(f"duplicate record for mouse {m!r} at day {t:g}")
            seen.add((m, t))
            bucket = inputs if t == self.input_day else outputs
            bucket[m] = bucket.get(m, 0) + 1
        for m in set(inputs) | set(outputs):
            if inputs.get(m, 0) != 1:
                raise ValueError(f"mouse {m!r} needs exactly one input record")
            if outputs.get(m, 0) > 1:
                raise ValueError(f"mouse {m!r} has more than one output record")

    @property
    def n(self):
        return self.times.size

    @property
    def paired(self):
        return self.mouse_ids is not None

    @property
    def output_days(self):
        return tuple(float(d) for d in np.unique(self.times[self.times != self.input_day]))

    @property
    def n_mice(self):
        return len(set(self.mouse_ids)) if self.paired else 0

    def strata(self):
        """Record indices grouped by measurement day."""
        return {float(d): np.flatnonzero(self.times == d) for d in np.unique(self.times)}

    def subset(self, idx, name=None):
        idx = np.asarray(idx, dtype=int)
        pick = lambda labels: None if labels is None else tuple(labels[i] for i in idx)
        return Dataset(self.times[idx], self.values[idx], pick(self.mouse_ids),
                       pick(self.sgrna_ids), self.name if name is None else name,
                       self.input_day, self.flags)

    def resampled(self, idx):
        """Records at ``idx`` (repeats allowed); drops the pairing labels."""
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.times[idx], self.values[idx], name=self.name,
                       input_day=self.input_day)

    def pairs(self, days):
        """Paired (input, output) values for mice measured at one of ``days``."""
        if not self.paired:
            return np.empty(0), np.empty(0)
        days = np.atleast_1d(np.asarray(days, dtype=float))
        inputs = {m: y for m, t, y in zip(self.mouse_ids, self.times, self.values)
                  if t == self.input_day}
        y0, y1 = [], []
        for m, t, y in zip(self.mouse_ids, self.times, self.values):
            if t != self.input_day and np.any(t == days) and m in inputs:
                y0.append(inputs[m])
                y1.append(y)
        return np.array(y0), np.array(y1)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values)
                and self.mouse_ids == other.mouse_ids
                and self.sgrna_ids == other.sgrna_ids
                and self.name == other.name and self.input_day == other.input_day)

    __hash__ = None


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ParamVector:
    """Full parameter vector on the natural scale with a free/fixed mask."""

    model: str
    values: tuple
    free: tuple

    @property
    def spec(self):
        return _spec(self.model)

    @property
    def names(self):
        return self.spec.names

    def __getitem__(self, name):
        return self.values[self.spec.index(name)]

    def as_dict(self):
        return dict(zip(self.names, self.values))

    def transformed(self):
        return self.spec.to_transformed(self.values)

    def to_params(self):
        cls = {"exp": ExpParams, "exp_raw": ExpRawParams, "logistic": LogisticParams}
        return cls[self.model](*self.values)


def _as_param_vector(params, model=None):
    if isinstance(params, ParamVector):
        return params
    if isinstance(params, ExpParams):
        return ParamVector("exp", tuple(params.as_array()), (True,) * 3)
    if isinstance(params, ExpRawParams):
        return ParamVector("exp_raw", tuple(params.as_array()), (True,) * 5)
    if isinstance(params, LogisticParams):
        return ParamVector("logistic", tuple(params.as_array()), (True,) * 6)
    if model is None:
        raise TypeError("model must be given for plain parameter sequences")
    spec = _spec(model)
    values = tuple(float(v) for v in params)
    if len(values) != spec.size:
        raise ValueError(f"model {spec.name!r} expects {spec.size} values")
    return ParamVector(spec.name, values, (True,) * spec.size)


# ---------------------------------------------------------------------------
# mean models: log eta at the distinct times and its Jacobian in z


def _mean_exp(z, tu, rtol, atol):
    u = z[1] + z[0] * tu
    m = -np.logaddexp(0.0, u)
    p = np.exp(u + m)  # sigmoid(u)
    A = np.zeros((tu.size, 3))
    A[:, 0] = tu
    A[:, 1] = 1.0
    return m, -p[:, None] * A, (-p * (1.0 - p), A)


def _mean_exp_raw(z, tu, rtol, atol):
    u = z[3] - z[2] + (z[1] - z[0]) * tu
    m = -np.logaddexp(0.0, u)
    p = np.exp(u + m)
    A = np.zeros((tu.size, 5))
    A[:, 0] = -tu
    A[:, 1] = tu
    A[:, 2] = -1.0
    A[:, 3] = 1.0
    return m, -p[:, None] * A, (-p * (1.0 - p), A)


def _mean_logistic(z, tu, rtol, atol):
    if math.exp(z[3]) + math.exp(z[4]) >= math.exp(z[2]):
        raise IntegrationError("initial cell numbers exceed the carrying capacity", 0.0)
    logs, sens = logistic_log_states(z[0], z[1], z[2], z[3], z[4], tu, rtol=rtol,
                                     atol=atol, sensitivities=True)
    u1, u2 = logs[:, 0], logs[:, 1]
    m = u1 - np.logaddexp(u1, u2)
    q = -np.expm1(m)  # 1 - eta
    J = np.zeros((tu.size, 6))
    J[:, :5] = q[:, None] * (sens[:, 0, :] - sens[:, 1, :])
    return m, J, None


_MEAN = {"exp": _mean_exp, "exp_raw": _mean_exp_raw, "logistic": _mean_logistic}


def _nll_parts(model, z, tu, inv, logy, rtol, atol, order):
    """Negative log-likelihood (and derivatives up to ``order``) in full z."""
    m_u, J_u, curv = _MEAN[model](z, tu, rtol, atol)
    if order == 0 and not np.all(np.isfinite(m_u)):
        return np.nan, None, None
    s = z[-1]
    sig2 = math.exp(2.0 * s)
    n = logy.size
    r = logy - m_u[inv] + 0.5 * sig2
    rss = float(r @ r)
    f = n * s + 0.5 * n * LOG_2PI + 0.5 * rss / sig2
    if order == 0:
        return f, None, None
    p = z.size
    J = J_u[inv]
    g = np.empty(p)
    g[:-1] = -(J[:, :-1].T @ r) / sig2
    sum_r = float(r.sum())
    g[-1] = n + sum_r - rss / sig2
    H = np.empty((p, p))
    Jm = J[:, :-1]
    Hmm = Jm.T @ Jm / sig2
    if curv is not None:
        c_u, A_u = curv
        w = r * c_u[inv]
        A = A_u[inv][:, :-1]
        Hmm -= (A * w[:, None]).T @ A / sig2
    H[:-1, :-1] = Hmm
    Hms = -Jm.sum(axis=0) + 2.0 * (Jm.T @ r) / sig2
    H[:-1, -1] = Hms
    H[-1, :-1] = Hms
    H[-1, -1] = n * sig2 - 2.0 * sum_r + 2.0 * rss / sig2
    return f, g, H


class Objective:
    """Penalised negative log-likelihood over the free transformed parameters.

    ``fixed`` maps parameter names to natural-scale values that stay
    constant; every other component is free.  With ``l2_weight > 0`` the
    term ``l2_weight * |z_free|^2`` is added.
    """

    def __init__(self, model, data, fixed=None, l2_weight=0.0, sigma_floor=1e-6,
                 rtol=1e-8, atol=1e-8):
        self.spec = _spec(model)
        self.model = self.spec.name
        if data.n == 0:
            raise ValueError("dataset is empty")
        self.data = data
        self.fixed = dict(fixed or {})
        for name in self.fixed:
            self.spec.index(name)
        self.free_mask = np.array([nm not in self.fixed for nm in self.spec.names])
        self.free_idx = np.flatnonzero(self.free_mask)
        self.l2_weight = float(l2_weight)
        self.sigma_floor = float(sigma_floor)
        self.rtol, self.atol = rtol, atol
        self._tu, self._inv = np.unique(data.times, return_inverse=True)
        self._logy = np.log(data.values)
        self._z_template = np.zeros(self.spec.size)
        for name, v in self.fixed.items():
            i = self.spec.index(name)
            if self.spec.log[i] and not v > 0:
                raise ValueError(f"fixed {name} must be > 0")
            self._z_template[i] = math.log(v) if self.spec.log[i] else float(v)

    # -- bookkeeping -------------------------------------------------------

    @property
    def free_names(self):
        return tuple(self.spec.names[i] for i in self.free_idx)

    @property
    def n_free(self):
        return self.free_idx.size

    def fix(self, **values):
        """Copy of this objective with additional fixed components."""
        fixed = dict(self.fixed)
        fixed.update(values)
        return Objective(self.spec, self.data, fixed, self.l2_weight,
                         self.sigma_floor, self.rtol, self.atol)

    def with_penalty(self, l2_weight):
        return Objective(self.spec, self.data, self.fixed, l2_weight,
                         self.sigma_floor, self.rtol, self.atol)

    def with_data(self, data):
        return Objective(self.spec, data, self.fixed, self.l2_weight,
                         self.sigma_floor, self.rtol, self.atol)

    def full(self, z_free):
        z = self._z_template.copy()
        z[self.free_idx] = z_free
        return z

    def lower_bounds(self):
        lower = np.full(self.n_free, -np.inf)
        names = self.free_names
        if "sigma" in names or "theta3" in names:
            lower[-1] = math.log(self.sigma_floor)
        return lower

    def param_vector(self, z_free):
        values = self.spec.to_natural(self.full(z_free))
        return ParamVector(self.model, tuple(float(v) for v in values),
                           tuple(bool(b) for b in self.free_mask))

    def free_from_natural(self, values):
        """Free transformed coordinates of a full natural-scale vector."""
        return self.spec.to_transformed(values)[self.free_idx]

    # -- evaluation --------------------------------------------------------

    def _parts(self, z_free, order):
        z = self.full(z_free)
        try:
            return _nll_parts(self.model, z, self._tu, self._inv, self._logy,
                              self.rtol, self.atol, order)
        except (IntegrationError, FloatingPointError, OverflowError):
            return np.nan, None, None

    def negloglik(self, z_free):
        return self._parts(np.asarray(z_free, float), 0)[0]

    def loglik(self, z_free):
        return -self.negloglik(z_free)

    def penalty(self, z_free):
        z_free = np.asarray(z_free, float)
        return self.l2_weight * float(z_free @ z_free)

    def value(self, z_free):
        return self.negloglik(z_free) + self.penalty(z_free)

    def value_grad_hess(self, z_free):
        z_free = np.asarray(z_free, float)
        f, g, H = self._parts(z_free, 2)
        if g is None:
            return np.nan, np.full(self.n_free, np.nan), np.eye(self.n_free)
        idx = self.free_idx
        f = f + self.penalty(z_free)
        g = g[idx] + 2.0 * self.l2_weight * z_free
        H = H[np.ix_(idx, idx)] + 2.0 * self.l2_weight * np.eye(idx.size)
        return f, g, H

    def gradient(self, z_free):
        return self.value_grad_hess(z_free)[1]


def log_likelihood(params, data, model=None):
    """Log-likelihood of ``data`` at ``params``.

    ``params`` may be any of the parameter dataclasses, a
    :class:`ParamVector`, or a plain sequence together with ``model``.
    """
    pv = _as_param_vector(params, model)
    if pv["sigma" if pv.model != "exp" else "theta3"] <= 0:
        raise ValueError("sigma must be > 0")
    if data.n == 0:
        raise ValueError("dataset is empty")
    obj = Objective(pv.model, data)
    z = obj.free_from_natural(pv.values)
    value = obj.loglik(z)
    if not np.isfinite(value):
        raise FloatingPointError("log-likelihood evaluation failed")
    return value


def gradient(objective, params):
    """Gradient of the penalised objective in free transformed coordinates."""
    if isinstance(params, ParamVector):
        z = objective.free_from_natural(params.values)
    else:
        z = np.asarray(params, dtype=float)
    return objective.gradient(z)


# ---------------------------------------------------------------------------
# starting values


def _logit(p):
    p = np.clip(p, 1e-9, 1 - 1e-9)
    return math.log(p / (1 - p))


def _exp_guess(data):
    """Data-informed (theta1, theta2, sigma) for the exponential model."""
    t, y = data.times, data.values
    is_in = t == data.input_day
    y_in = y[is_in].mean() if is_in.any() else y[t == t.min()].mean()
    t_in = data.input_day if is_in.any() else t.min()
    theta2 = float(np.clip((1 - min(y_in, 0.999)) / min(y_in, 0.999), 1e-6, 1e6))
    late = t > t_in
    if late.any():
        span = t[late].mean() - t_in
        theta1 = (_logit(y_in) - _logit(y[late].mean())) / span
        theta1 = float(np.clip(theta1, -1.0, 1.0))
    else:
        theta1 = 0.0
    m = -np.logaddexp(0.0, math.log(theta2) + theta1 * t)
    sigma = float(max(np.std(np.log(y) - m), 0.05))
    return theta1, theta2, sigma


def initial_guess(objective, growth_guess=0.1):
    """Full natural-scale starting vector; fixed components keep their value."""
    th1, th2, sig = _exp_guess(objective.data)
    fixed = objective.fixed
    model = objective.model
    if model == "exp":
        values = {"theta1": th1, "theta2": th2, "theta3": sig}
    elif model == "exp_raw":
        x1 = fixed.get("x1_0", 1.0)
        values = {"beta1": growth_guess, "beta2": growth_guess + th1, "x1_0": x1,
                  "x2_0": th2 * x1, "sigma": sig}
    else:
        x1 = fixed.get("x1_0", 1.0)
        x2 = th2 * x1
        lam2 = fixed.get("lambda2", growth_guess)
        values = {"lambda1": lam2 - th1, "lambda2": lam2,
                  "capacity": fixed.get("capacity", 100.0 * (x1 + x2)),
                  "x1_0": x1, "x2_0": x2, "sigma": sig}
    values.update(fixed)
    return np.array([values[nm] for nm in objective.spec.names], dtype=float)


@dataclass(frozen=True)
class StartPolicy:
    """Latin-hypercube starts around a centre in transformed space.

    The first start is the centre itself.  ``rate_halfwidth`` applies to
    untransformed (growth-rate) components, ``log_halfwidth`` to the
    log-transformed ones.
    """

    n_starts: int = 20
    rate_halfwidth: float = 0.2
    log_halfwidth: float = 1.5

    def starts(self, objective, centre, seed):
        centre = np.asarray(centre, dtype=float)
        log = np.array(objective.spec.log)[objective.free_idx]
        half = np.where(log, self.log_halfwidth, self.rate_halfwidth)
        pts = [centre]
        if self.n_starts > 1:
            sampler = qmc.LatinHypercube(d=centre.size, seed=np.random.default_rng(seed))
            u = sampler.random(self.n_starts - 1)
            pts.extend(centre + (2.0 * u - 1.0) * half)
        return np.array(pts)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    estimate: ParamVector
    loglik: float
    objective_value: float
    n_starts: int
    converged_starts: int
    best_start_index: int
    z: np.ndarray = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)

    @property
    def degenerate(self):
        return bool(self.diagnostics.get("sigma_at_floor", False))


def fit(objective, starts=None, seed=0, centre=None, gtol=1e-8, xtol=1e-8,
        max_iter=500):
    """Best local optimum of the penalised objective over several starts.

    ``starts`` is a :class:`StartPolicy`, an int (number of starts) or an
    explicit array of free transformed starting points.  ``centre`` is an
    optional full natural-scale vector replacing the data-informed guess.
    The reported ``loglik`` excludes the penalty.
    """
    if objective.n_free == 0:
        raise ValueError("objective has no free parameters")
    if isinstance(starts, np.ndarray):
        points = np.atleast_2d(starts)
    else:
        policy = starts if isinstance(starts, StartPolicy) else StartPolicy(
            n_starts=20 if starts is None else int(starts))
        c = initial_guess(objective) if centre is None else np.asarray(centre, float)
        points = policy.starts(objective, objective.free_from_natural(c), seed)
    lower = objective.lower_bounds()
    runs = []
    for x0 in points:
        res = trust_region(objective.value_grad_hess, x0, lower=lower, gtol=gtol,
                           xtol=xtol, max_iter=max_iter)
        runs.append(res)
    diag = [{"start": i, "converged": r.converged, "fun": float(r.fun),
             "nit": r.nit, "message": r.message} for i, r in enumerate(runs)]
    ok = [i for i, r in enumerate(runs) if r.converged and np.isfinite(r.fun)]
    if not ok:
        raise FitError("no start converged", diag)
    best = min(ok, key=lambda i: (runs[i].fun, i))
    r = runs[best]
    loglik = objective.loglik(r.x)
    if not np.isfinite(loglik):
        raise FitError("non-finite log-likelihood at the optimum", diag)
    at_floor = bool(np.any(r.at_bound))
    return FitResult(objective.param_vector(r.x), float(loglik), float(r.fun),
                     len(runs), len(ok), best, r.x.copy(),
                     {"starts": diag, "sigma_at_floor": at_floor})
