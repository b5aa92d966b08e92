"""Reusable experiment routines shared by ``scripts/`` and the acceptance tests."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .inference import Dataset, Objective, fit
from .models import LogisticParams, observable, observable_exponential_closed_form, solve_logistic
from .profiles import (DELTA_CANTELLI, DELTA_CHI1SQ, classify_identifiability,
                       confidence_region, profile)
from .simulation import SCENARIO_RATES, simulate_states

__all__ = [
    "DESIGN_DAYS",
    "design_times",
    "noisy_observations",
    "IdentifiabilityCase",
    "identifiability_cases",
    "run_identifiability",
    "simulator_fidelity",
]

# integer days 0..50 with 20 records each: 1020 observations
DESIGN_DAYS = np.arange(51.0)
REPLICATES_PER_DAY = 20


def design_times():
    return np.repeat(DESIGN_DAYS, REPLICATES_PER_DAY)


def noisy_observations(eta, sigma, rng):
    """Multiply ``eta`` by unit-mean log-normal noise."""
    eta = np.asarray(eta, float)
    return eta * np.exp(rng.normal(-0.5 * sigma ** 2, sigma, eta.size))


def exponential_dataset(beta1, beta2, x1_0, x2_0, sigma, rng):
    t = design_times()
    eta = observable_exponential_closed_form(beta2 - beta1, x2_0 / x1_0, t)
    return Dataset(t, noisy_observations(eta, sigma, rng), name="exp-design")


def logistic_dataset(params, rng):
    t = design_times()
    eta_u = observable(solve_logistic(params, DESIGN_DAYS))
    eta = eta_u[np.searchsorted(DESIGN_DAYS, t)]
    return Dataset(t, noisy_observations(eta, params.sigma, rng), name="logistic-design")


@dataclass
class IdentifiabilityCase:
    name: str
    model: str
    data: Dataset = field(repr=False)
    fixed: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)   # parameter -> set of accepted verdicts


NON_IDENTIFIABLE = {"structural-non-identifiable", "practical-non-identifiable"}
STRUCTURAL = {"structural-non-identifiable"}
IDENTIFIABLE = {"identifiable"}


def identifiability_cases(seed=0):
    """The five model/data combinations with their expected verdicts.

    Each case draws its own noise from ``default_rng([seed, k])``.
    """
    def rng(k):
        return np.random.default_rng([seed, k])

    exp_data = exponential_dataset(0.1, 0.2, 10, 10, 0.2, rng(0))
    base = LogisticParams(0.1, 0.2, 1000, 10, 10, 0.2)
    equal = LogisticParams(0.1, 0.1, 1000, 10, 10, 0.2)
    log_data = logistic_dataset(base, rng(1))
    equal_data = logistic_dataset(equal, rng(2))
    return [
        IdentifiabilityCase("exponential, raw parameters", "exp_raw", exp_data, {},
                            {"beta1": STRUCTURAL, "beta2": STRUCTURAL, "x1_0": STRUCTURAL,
                             "x2_0": STRUCTURAL, "sigma": IDENTIFIABLE}),
        IdentifiabilityCase("exponential, reparametrised", "exp", exp_data, {},
                            {"theta1": IDENTIFIABLE, "theta2": IDENTIFIABLE,
                             "theta3": IDENTIFIABLE}),
        IdentifiabilityCase("logistic, all free", "logistic", log_data, {},
                            {"capacity": STRUCTURAL, "x1_0": STRUCTURAL,
                             "x2_0": STRUCTURAL}),
        IdentifiabilityCase("logistic, x1_0 fixed", "logistic", log_data, {"x1_0": 10.0},
                            {p: IDENTIFIABLE for p in ("lambda1", "lambda2", "capacity",
                                                       "x2_0", "sigma")}),
        IdentifiabilityCase("logistic, x1_0 fixed, lambda1 = lambda2", "logistic", equal_data,
                            {"x1_0": 10.0},
                            {"lambda1": NON_IDENTIFIABLE, "lambda2": NON_IDENTIFIABLE}),
    ]


def run_identifiability(seed=0, n_starts=20, l2_weight=1e-3, flat_tol=1e-3, cases=None):
    """Fit, profile and classify every parameter of every case.

    Returns one dict per (case, parameter) with the verdict, both
    threshold regions and the profile flatness; ``elapsed`` holds the
    per-case wall time.
    """
    rows = []
    for case in cases or identifiability_cases(seed):
        t0 = time.perf_counter()
        obj = Objective(case.model, case.data, fixed=case.fixed or None, l2_weight=l2_weight)
        res = fit(obj, starts=n_starts, seed=seed)
        case_rows = []
        for name in obj.free_names:
            curve = profile(name, res, obj)
            chi = confidence_region(curve, DELTA_CHI1SQ)
            cant = confidence_region(curve, DELTA_CANTELLI)
            verdict = classify_identifiability(curve, chi, flat_tol)
            case_rows.append({
                "case": case.name, "model": case.model, "parameter": name,
                "estimate": curve.mle_value, "verdict": verdict.kind,
                "evidence": verdict.evidence, "flatness": curve.flatness,
                "region_chi1sq": chi, "region_cantelli": cant,
                "expected": case.expected.get(name),
            })
        elapsed = time.perf_counter() - t0
        for r in case_rows:
            r["elapsed"] = elapsed
        rows.extend(case_rows)
    return rows


def simulator_fidelity(scenarios=("no-effect", "strong"), x0=500, n_paths=1000,
                       days=(14.0, 40.0), seed=0, epsilon=0.03):
    """Compare tau-leaping with the exact SSA and with the mean-field solution.

    Returns per scenario the two-sample KS p-value on ``x1`` at the last
    day and, for every simulator, population and day, the z-score of the
    Monte-Carlo mean against ``x0 exp((birth - death) t)``.
    """
    record = [0.0] + [float(d) for d in days]
    out = {}
    for k, name in enumerate(scenarios):
        rates = SCENARIO_RATES[name]
        paths = {}
        for method in ("exact", "tau"):
            paths[method] = np.array([
                simulate_states(rates, x0, x0, record, [seed, k, i, method == "tau"],
                                method, epsilon) for i in range(n_paths)])
        ks = stats.ks_2samp(paths["exact"][:, -1, 0], paths["tau"][:, -1, 0])
        z = {}
        for method, arr in paths.items():
            for pop, net in enumerate(rates.net):
                for j, day in enumerate(days, start=1):
                    x = arr[:, j, pop].astype(float)
                    expected = x0 * math.exp(net * day)
                    se = x.std(ddof=1) / math.sqrt(x.size)
                    z[(method, f"x{pop + 1}", day)] = (x.mean() - expected) / se
        out[name] = {"ks_pvalue": float(ks.pvalue), "ks_statistic": float(ks.statistic),
                     "mean_z": z}
    return out
