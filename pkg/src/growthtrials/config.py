"""Run configuration: one JSON document with a fixed set of sections.

Example (every key optional; omitted keys take the defaults below)::

    {
      "seed": 0, "alpha": 0.05, "model": "exp", "threshold": "chi1sq",
      "jobs": 1, "out": "results",
      "fit": {"n_starts": 20, "l2_weight": 0.0},
      "logistic_fixed": {"capacity": 1e9, "x1_0": 5e4},
      "scan": {"target_fraction": 0.2, "travel_cap": 20.0},
      "bootstrap": {"n_resamples": 999, "l2_weight": 1e-3},
      "calibration": {"n_boot": 300, "parameters": []},
      "evaluation": {"early_day": 14.0, "early_window": 3.0, "n_starts": 20},
      "study": {"scenarios": ["no-effect", "weak", "medium", "strong"],
                "sizes": [8, 16, 32, 64], "n_datasets": 100}
    }

``GROWTHTRIALS_OUT`` and ``GROWTHTRIALS_JOBS`` override ``out`` and
``jobs``.  Neither of them enters :meth:`RunConfig.digest`, since they do
not change results.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .bootstrap import BootstrapPlan
from .evaluation import EvaluationConfig
from .profiles import DELTA_CANTELLI, DELTA_CHI1SQ, ScanPolicy, threshold
from .simulation import SCENARIO_RATES, default_grid

__all__ = ["ConfigError", "RunConfig", "load_config"]

ENV_OUT = "GROWTHTRIALS_OUT"
ENV_JOBS = "GROWTHTRIALS_JOBS"


class ConfigError(ValueError):
    pass


@dataclass
class FitSettings:
    n_starts: int = 20
    l2_weight: float = 0.0


@dataclass
class ScanSettings:
    target_fraction: float = 0.2
    stop_deviance: float | None = None   # default: 1.3 x the largest threshold used
    travel_cap: float = 20.0
    max_step: float = 4.0
    min_step: float = 1e-4
    max_points: int = 400
    flat_tol: float = 1e-3

    def policy(self, delta, default_stop=None):
        stop = self.stop_deviance
        if stop is None:
            stop = default_stop if default_stop is not None else max(10.0, 1.3 * delta)
        return ScanPolicy(delta=delta, target_fraction=self.target_fraction,
                          stop_deviance=stop, travel_cap=self.travel_cap,
                          max_step=self.max_step, min_step=self.min_step,
                          max_points=self.max_points)


@dataclass
class BootstrapSettings:
    n_resamples: int = 999
    refit_starts: int = 1
    l2_weight: float = 1e-3
    max_failure_rate: float = 0.2
    n_starts: int = 20
    min_records: int = 8

    def plan(self, seed, jobs):
        return BootstrapPlan(n_resamples=self.n_resamples, seed=seed,
                             refit_starts=self.refit_starts, l2_weight=self.l2_weight,
                             max_failure_rate=self.max_failure_rate,
                             n_starts=self.n_starts, min_records=self.min_records, jobs=jobs)


@dataclass
class CalibrationSettings:
    n_boot: int = 300
    parameters: list = field(default_factory=list)   # empty: the growth-difference parameter


@dataclass
class EvaluationSettings:
    early_day: float = 14.0
    early_window: float = 3.0
    n_starts: int = 20
    l2_weight: float = 1e-3


@dataclass
class StudySettings:
    scenarios: list = field(default_factory=lambda: list(SCENARIO_RATES))
    sizes: list = field(default_factory=lambda: [8, 16, 32, 64])
    n_datasets: int = 100
    method: str = "tau"


_SECTIONS = {
    "fit": FitSettings,
    "scan": ScanSettings,
    "bootstrap": BootstrapSettings,
    "calibration": CalibrationSettings,
    "evaluation": EvaluationSettings,
    "study": StudySettings,
}


@dataclass
class RunConfig:
    seed: int = 0
    alpha: float = 0.05
    model: str = "exp"
    threshold: str = "chi1sq"
    jobs: int = 1
    out: str = "results"
    logistic_fixed: dict = field(default_factory=lambda: {"capacity": 1e9, "x1_0": 5e4})
    fit: FitSettings = field(default_factory=FitSettings)
    scan: ScanSettings = field(default_factory=ScanSettings)
    bootstrap: BootstrapSettings = field(default_factory=BootstrapSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    study: StudySettings = field(default_factory=StudySettings)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in ("exp", "logistic"):
            raise ConfigError(f"model must be 'exp' or 'logistic', got {self.model!r}")
        if self.threshold not in ("chi1sq", "cantelli"):
            raise ConfigError(f"threshold must be 'chi1sq' or 'cantelli', got {self.threshold!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.jobs) < 1:
            raise ConfigError(f"jobs must be at least 1, got {self.jobs}")
        unknown = set(self.study.scenarios) - set(SCENARIO_RATES)
        if unknown:
            raise ConfigError(f"unknown scenarios {sorted(unknown)}; "
                              f"choose from {sorted(SCENARIO_RATES)}")
        bad = set(self.logistic_fixed) - {"capacity", "x1_0", "x2_0", "lambda1", "lambda2"}
        if bad:
            raise ConfigError(f"logistic_fixed has unknown keys {sorted(bad)}")

    # -- serialisation -----------------------------------------------------

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def dump(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        top = {f.name for f in fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for name, klass in _SECTIONS.items():
            if name in d:
                sec = d[name]
                if not isinstance(sec, dict):
                    raise ConfigError(f"section {name!r} must be an object")
                allowed = {f.name for f in fields(klass)}
                bad = set(sec) - allowed
                if bad:
                    raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
                d[name] = klass(**sec)
        return cls(**d)

    def digest(self):
        """Hash of everything that affects results."""
        d = self.to_dict()
        d.pop("out")
        d.pop("jobs")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_env(self, environ=None):
        environ = os.environ if environ is None else environ
        if environ.get(ENV_OUT):
            self.out = environ[ENV_OUT]
        if environ.get(ENV_JOBS):
            try:
                self.jobs = int(environ[ENV_JOBS])
            except ValueError:
                raise ConfigError(f"{ENV_JOBS} must be an integer") from None
        self.validate()
        return self

    # -- module settings ---------------------------------------------------

    def delta(self):
        return threshold(self.threshold, self.alpha)

    def bootstrap_plan(self):
        return self.bootstrap.plan(self.seed, self.jobs)

    def evaluation_config(self):
        ev = self.evaluation
        return EvaluationConfig(
            alpha=self.alpha, early_day=ev.early_day, early_window=ev.early_window,
            n_starts=ev.n_starts, l2_weight=ev.l2_weight,
            logistic_fixed=dict(self.logistic_fixed), bootstrap=self.bootstrap.plan(self.seed, 1),
            min_boot_records=self.bootstrap.min_records,
            # one scan serves both thresholds, so it has to reach past the larger
            scan=self.scan.policy(DELTA_CHI1SQ, 1.3 * DELTA_CANTELLI))

    def scenario_grid(self):
        return default_grid(tuple(self.study.sizes), self.study.n_datasets,
                            list(self.study.scenarios), method=self.study.method)


def load_config(path=None, environ=None):
    """Read a JSON config (or defaults when ``path`` is None) and apply env overrides."""
    if path is None:
        cfg = RunConfig()
    else:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
        try:
            cfg = RunConfig.from_dict(raw)
        except TypeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    return cfg.with_env(environ)
