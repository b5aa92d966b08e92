"""Stochastic birth-death simulation of two cell populations and synthetic
experiment generation.

Each population follows a linear birth-death Markov jump process, so the
mean dynamics are exactly exponential with net rate ``birth - death``.
Paths are generated inside numba-compiled kernels; every path is seeded
from its own index-derived stream so results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .inference import Dataset
from .models import StateTrajectory

__all__ = [
    "ReactionRates",
    "ScenarioSpec",
    "SCENARIO_RATES",
    "scenario",
    "default_grid",
    "ResourceError",
    "gillespie_exact",
    "tau_leap",
    "simulate_states",
    "synthesize_dataset",
    "run_study",
    "StudyArchive",
    "load_archive",
    "write_dataset_csv",
]


class ResourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReactionRates:
    r1: float  # population 1 proliferation
    r2: float  # population 1 death
    r3: float  # population 2 proliferation
    r4: float  # population 2 death

    def __post_init__(self):
        for name in ("r1", "r2", "r3", "r4"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")

    @property
    def net(self):
        return self.r1 - self.r2, self.r3 - self.r4

    def as_array(self):
        return np.array([self.r1, self.r2, self.r3, self.r4], dtype=float)


SCENARIO_RATES = {
    "no-effect": ReactionRates(0.2, 0.11, 0.2, 0.11),
    "weak": ReactionRates(0.2, 0.13, 0.2, 0.11),
    "medium": ReactionRates(0.2, 0.15, 0.2, 0.11),
    "strong": ReactionRates(0.2, 0.21, 0.2, 0.11),
}


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    rates: ReactionRates
    x1_0: int = 50_000
    x2_0: int = 50_000
    sigma: float = 0.2
    output_days: tuple = (14.0, 40.0)
    mice_per_output_day: int = 2
    n_datasets: int = 100
    method: str = "tau"
    epsilon: float = 0.03
    n_critical: int = 30

    def __post_init__(self):
        if self.x1_0 <= 0 or self.x2_0 <= 0:
            raise ValueError("initial counts must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.mice_per_output_day < 1 or self.n_datasets < 0:
            raise ValueError("invalid design counts")
        if self.method not in ("tau", "exact"):
            raise ValueError("method must be 'tau' or 'exact'")
        days = tuple(float(d) for d in self.output_days)
        if not days or any(d <= 0 for d in days):
            raise ValueError("output days must be positive")
        object.__setattr__(self, "output_days", days)

    @property
    def sample_size(self):
        """Total records: one input and one output per mouse."""
        return 2 * self.mice_per_output_day * len(self.output_days)

    @property
    def label(self):
        return f"{self.name}_n{self.sample_size}"


def scenario(name, n=8, **kwargs):
    """Named scenario with total sample size ``n`` (two output days)."""
    try:
        rates = SCENARIO_RATES[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIO_RATES)}") from None
    days = kwargs.get("output_days", (14.0, 40.0))
    per_day, rem = divmod(n, 2 * len(days))
    if rem or per_day < 1:
        raise ValueError(f"sample size {n} is not a positive multiple of {2 * len(days)}")
    return ScenarioSpec(name, rates, mice_per_output_day=per_day, **kwargs)


def default_grid(sizes=(8, 16, 32, 64), n_datasets=100, names=None, **kwargs):
    names = names or list(SCENARIO_RATES)
    return [scenario(nm, n, n_datasets=n_datasets, **kwargs) for nm in names for n in sizes]


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _ssa_kernel(rates, x1, x2, record, seed, max_events, keep_path):
    """Exact SSA; returns (recorded states, jump times, jump states, status)."""
    np.random.seed(seed)
    n_rec = record.size
    rec = np.empty((n_rec, 2), dtype=np.int64)
    cap = max_events if keep_path else 1
    jt = np.empty(cap + 1)
    jx = np.empty((cap + 1, 2), dtype=np.int64)
    jt[0] = 0.0
    jx[0, 0] = x1
    jx[0, 1] = x2
    n_jump = 1
    t = 0.0
    k = 0
    events = 0
    while k < n_rec and record[k] <= t:
        rec[k, 0] = x1
        rec[k, 1] = x2
        k += 1
    while k < n_rec:
        a1 = rates[0] * x1
        a2 = rates[1] * x1
        a3 = rates[2] * x2
        a4 = rates[3] * x2
        a0 = a1 + a2 + a3 + a4
        if a0 <= 0.0:
            while k < n_rec:
                rec[k, 0] = x1
                rec[k, 1] = x2
                k += 1
            break
        t_next = t + np.random.exponential(1.0 / a0)
        while k < n_rec and record[k] < t_next:
            rec[k, 0] = x1
            rec[k, 1] = x2
            k += 1
        if k >= n_rec:
            break
        events += 1
        if events > max_events:
            return rec, jt[:n_jump], jx[:n_jump], 1
        u = np.random.random() * a0
        if u < a1:
            x1 += 1
        elif u < a1 + a2:
            x1 -= 1
        elif u < a1 + a2 + a3:
            x2 += 1
        else:
            x2 -= 1
        t = t_next
        if keep_path:
            jt[n_jump] = t
            jx[n_jump, 0] = x1
            jx[n_jump, 1] = x2
            n_jump += 1
    return rec, jt[:n_jump], jx[:n_jump], 0


@numba.njit(cache=True)
def _phi(h):
    """expm1(h) / h with the removable singularity at 0."""
    if abs(h) < 1e-8:
        return 1.0 + 0.5 * h
    return math.expm1(h) / h


@numba.njit(cache=True)
def _tau_kernel(rates, x1, x2, record, seed, eps, n_crit, max_steps):
    """Tau-leaping with Cao-style step selection and exact-step fallback.

    Exact SSA steps are used while any surviving population is below
    ``n_crit`` cells, and in bursts of 100 whenever the leap would be
    shorter than ten expected exact steps.  Leaps producing negative counts
    are rejected and retried with half the step.  Firing counts are Poisson
    with means ``a_j * expm1(mu tau) / mu`` (``mu`` the species' net rate)
    rather than ``a_j * tau``.
    """
    np.random.seed(seed)
    n_rec = record.size
    rec = np.empty((n_rec, 2), dtype=np.int64)
    t = 0.0
    k = 0
    steps = 0
    exact_left = 0
    while k < n_rec and record[k] <= t:
        rec[k, 0] = x1
        rec[k, 1] = x2
        k += 1
    while k < n_rec:
        steps += 1
        if steps > max_steps:
            return rec, 1
        a1 = rates[0] * x1
        a2 = rates[1] * x1
        a3 = rates[2] * x2
        a4 = rates[3] * x2
        a0 = a1 + a2 + a3 + a4
        if a0 <= 0.0:
            while k < n_rec:
                rec[k, 0] = x1
                rec[k, 1] = x2
                k += 1
            break
        t_rec = record[k]
        small = (0 < x1 < n_crit) or (0 < x2 < n_crit)
        tau = np.inf
        if not small and exact_left == 0:
            mu1 = a1 - a2
            var1 = a1 + a2
            mu2 = a3 - a4
            var2 = a3 + a4
            if x1 > 0:
                b = max(eps * x1, 1.0)
                if mu1 != 0.0:
                    tau = min(tau, b / abs(mu1))
                if var1 > 0.0:
                    tau = min(tau, b * b / var1)
            if x2 > 0:
                b = max(eps * x2, 1.0)
                if mu2 != 0.0:
                    tau = min(tau, b / abs(mu2))
                if var2 > 0.0:
                    tau = min(tau, b * b / var2)
            if tau < 10.0 / a0:
                exact_left = 100
        if small or exact_left > 0:
            if exact_left > 0:
                exact_left -= 1
            t_next = t + np.random.exponential(1.0 / a0)
            if t_next >= t_rec:
                # memoryless: restart the clock at the record time
                t = t_rec
                rec[k, 0] = x1
                rec[k, 1] = x2
                k += 1
                continue
            u = np.random.random() * a0
            if u < a1:
                x1 += 1
            elif u < a1 + a2:
                x1 -= 1
            elif u < a1 + a2 + a3:
                x2 += 1
            else:
                x2 -= 1
            t = t_next
            continue
        hit = False
        if t + tau >= t_rec:
            tau = t_rec - t
            hit = True
        while True:
            # Poisson means integrate the propensities along the mean path,
            # which keeps E[x(t + tau) | x(t)] exact for linear rates
            w1 = tau * _phi((rates[0] - rates[1]) * tau)
            w2 = tau * _phi((rates[2] - rates[3]) * tau)
            n1 = x1 + np.random.poisson(a1 * w1) - np.random.poisson(a2 * w1)
            n2 = x2 + np.random.poisson(a3 * w2) - np.random.poisson(a4 * w2)
            if n1 >= 0 and n2 >= 0:
                break
            tau *= 0.5
            hit = False
        x1 = n1
        x2 = n2
        t = t_rec if hit else t + tau
        if hit:
            rec[k, 0] = x1
            rec[k, 1] = x2
            k += 1
    return rec, 0


def _path_seed(seed):
    """32-bit kernel seed from an int or a sequence of ints."""
    entropy = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _check_initial(rates, x1_0, x2_0):
    if not isinstance(rates, ReactionRates):
        rates = ReactionRates(*rates)
    if x1_0 <= 0 or x2_0 <= 0:
        raise ValueError("initial counts must be positive")
    return rates


def simulate_states(rates, x1_0, x2_0, record_times, seed, method="tau", epsilon=0.03,
                    n_critical=30, max_events=10**9):
    """Population counts at ``record_times`` (shape ``(len, 2)``)."""
    rates = _check_initial(rates, x1_0, x2_0)
    record = np.asarray(record_times, dtype=float)
    if np.any(np.diff(record) < 0) or np.any(record < 0):
        raise ValueError("record times must be sorted and >= 0")
    s = _path_seed(seed)
    if method == "exact":
        rec, _, _, status = _ssa_kernel(rates.as_array(), int(x1_0), int(x2_0), record,
                                        s, int(max_events), False)
    elif method == "tau":
        rec, status = _tau_kernel(rates.as_array(), int(x1_0), int(x2_0), record, s,
                                  float(epsilon), int(n_critical), int(max_events))
    else:
        raise ValueError(f"unknown method {method!r}")
    if status:
        raise ResourceError("event cap exceeded; use tau-leaping or raise max_events")
    return rec


def _trajectory(times, states):
    return StateTrajectory(np.asarray(times, float), states[:, 0].astype(float),
                           states[:, 1].astype(float))


def gillespie_exact(rates, x1_0, x2_0, t_end, seed, max_events=10**7, record_times=None):
    """Exact SSA path.

    Without ``record_times`` the full jump path is returned (time of each
    jump and the state right after it, starting at time 0).  With
    ``record_times`` only the states at those days are kept, which has no
    event-storage limit besides ``max_events``.
    """
    rates = _check_initial(rates, x1_0, x2_0)
    if record_times is not None:
        rec = simulate_states(rates, x1_0, x2_0, record_times, seed, "exact",
                              max_events=max_events)
        return _trajectory(record_times, rec)
    record = np.array([float(t_end)])
    rec, jt, jx, status = _ssa_kernel(rates.as_array(), int(x1_0), int(x2_0), record,
                                      _path_seed(seed), int(max_events), True)
    if status:
        raise ResourceError("event cap exceeded; use tau-leaping or raise max_events")
    if jt[-1] < t_end:
        jt = np.append(jt, float(t_end))
        jx = np.vstack([jx, rec[-1:]])
    return _trajectory(jt, jx)


def tau_leap(rates, x1_0, x2_0, t_end, seed, epsilon=0.03, n_critical=30,
             record_times=None, max_steps=10**8):
    """Tau-leaping path read at ``record_times`` (default: day 0 and ``t_end``)."""
    if record_times is None:
        record_times = [0.0, float(t_end)]
    rec = simulate_states(rates, x1_0, x2_0, record_times, seed, "tau", epsilon,
                          n_critical, max_steps)
    return _trajectory(record_times, rec)


# ---------------------------------------------------------------------------
# synthetic experiments


def _entropy(seed):
    return list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]


def synthesize_dataset(spec, seed, name=None, max_attempts=100):
    """One synthetic experiment following ``spec``.

    Every mouse gets its own trajectory read at day 0 and at its output
    day; both readings are multiplied by independent log-normal factors
    with unit mean.  Paths in which a population dies out are regenerated;
    the count is stored in ``flags``.
    """
    base = _entropy(seed)
    noise = np.random.default_rng(base + [0])
    times, values, mice = [], [], []
    regenerated = 0
    mouse = 0
    for day in spec.output_days:
        for _ in range(spec.mice_per_output_day):
            mouse += 1
            for attempt in range(max_attempts):
                rec = simulate_states(spec.rates, spec.x1_0, spec.x2_0, [0.0, day],
                                      base + [mouse, attempt], spec.method, spec.epsilon,
                                      spec.n_critical)
                if np.all(rec > 0):
                    break
                regenerated += 1
            else:
                raise ResourceError(f"mouse {mouse}: extinction in {max_attempts} attempts")
            eta = rec[:, 0] / rec.sum(axis=1)
            eps = np.exp(noise.normal(-0.5 * spec.sigma ** 2, spec.sigma, 2)) \
                if spec.sigma > 0 else np.ones(2)
            label = f"m{mouse:03d}"
            times += [0.0, day]
            values += list(eta * eps)
            mice += [label, label]
    flags = (f"regenerated={regenerated}",) if regenerated else ()
    return Dataset(np.array(times), np.array(values), tuple(mice),
                   name=name or spec.label, flags=flags)


def _dataset_seed(seed, spec, replicate):
    return [int(seed), zlib.crc32(spec.label.encode()), int(replicate)]


def write_dataset_csv(data, path, experiment_id=None):
    """Write ``data`` in the measurement-file schema."""
    from .io import export
    export({experiment_id or data.name: data}, path)


@dataclass
class StudyArchive:
    """Generated datasets plus their metadata.

    ``entries`` hold one metadata dict per dataset (id, scenario, sample
    size, replicate, seed, regenerated paths, relative file path).
    """

    entries: list
    datasets: dict = field(default_factory=dict, repr=False)
    root: Path | None = None

    def __len__(self):
        return len(self.entries)

    def get(self, dataset_id):
        if dataset_id not in self.datasets and self.root is not None:
            from .io import read_dataset_csv
            entry = next(e for e in self.entries if e["dataset_id"] == dataset_id)
            self.datasets[dataset_id] = read_dataset_csv(self.root / entry["file"])
        return self.datasets[dataset_id]


def _synth_entry(spec, seed, rep):
    ds_seed = _dataset_seed(seed, spec, rep)
    did = f"{spec.label}_r{rep:03d}"
    data = synthesize_dataset(spec, ds_seed, name=did)
    regen = 0
    for f in data.flags:
        if f.startswith("regenerated="):
            regen = int(f.split("=")[1])
    entry = {"dataset_id": did, "scenario": spec.name, "n": spec.sample_size,
             "replicate": rep, "seed": ds_seed, "regenerated": regen,
             "file": f"datasets/{did}.csv"}
    return entry, data


def run_study(specs, seed=0, out_dir=None, jobs=1):
    """Generate every replicate of every scenario.

    With ``out_dir`` each dataset is written as CSV under
    ``out_dir/datasets`` and a ``manifest.json`` describes the run.
    """
    tasks = [(spec, rep) for spec in specs for rep in range(spec.n_datasets)]
    if jobs > 1 and tasks:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(delayed(_synth_entry)(s, seed, r) for s, r in tasks)
    else:
        results = [_synth_entry(s, seed, r) for s, r in tasks]
    entries = [e for e, _ in results]
    datasets = {e["dataset_id"]: d for e, d in results}
    root = None
    if out_dir is not None:
        root = Path(out_dir)
        (root / "datasets").mkdir(parents=True, exist_ok=True)
        for e in entries:
            write_dataset_csv(datasets[e["dataset_id"]], root / e["file"])
        manifest = {
            "format": "growthtrials-study/1",
            "seed": int(seed),
            "scenarios": [_spec_dict(s) for s in specs],
            "datasets": entries,
        }
        with open(root / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return StudyArchive(entries, datasets, root)


def _spec_dict(spec):
    d = asdict(spec)
    d["output_days"] = list(spec.output_days)
    d["sample_size"] = spec.sample_size
    return d


def spec_from_dict(d):
    d = dict(d)
    d.pop("sample_size", None)
    d["rates"] = ReactionRates(**d["rates"])
    d["output_days"] = tuple(d["output_days"])
    return ScenarioSpec(**d)


def load_archive(root):
    root = Path(root)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    return StudyArchive(manifest["datasets"], {}, root)
