"""Effect-detection methods, the simulation-study scoreboard and the PDX
summary built from the bundled result tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .bootstrap import BootstrapPlan, DesignError, ReliabilityError, bootstrap_ci_difference
from .inference import Dataset, FitError, Objective, StartPolicy, fit
from .profiles import (DELTA_CANTELLI, DELTA_CHI1SQ, ConfidenceRegion, ScanPolicy,
                       confidence_region, parse_region, profile)

__all__ = [
    "METHODS",
    "DetectionOutcome",
    "EvaluationConfig",
    "LabelError",
    "paired_t_test",
    "decide_region",
    "evaluate_dataset",
    "Scoreboard",
    "score_study",
    "split_by_sgrna",
    "PDXExperiment",
    "load_pdx_fixtures",
    "chi1sq_from_cantelli",
    "evaluate_pdx",
    "pdx_summary",
]

METHODS = ("t14", "t_end", "exp_chi1sq", "exp_cantelli", "logistic_boot")

EFFECT, NO_EFFECT, NOT_APPLICABLE = "effect", "no-effect", "not-applicable"
INHIBITING, ENHANCING, NONE = "inhibiting", "enhancing", "none"

# per-dataset matrix codes
DECISION_CODES = {NO_EFFECT: 0, EFFECT: 1, NOT_APPLICABLE: -1}


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionOutcome:
    method: str
    decision: str
    direction: str = NONE
    evidence: object = None
    alpha: float = 0.05
    note: str = ""

    @property
    def detected(self):
        return self.decision == EFFECT

    @property
    def code(self):
        """Matrix code: 1 inhibiting effect, 2 enhancing, 3 other effect,
        0 no effect, -1 not applicable."""
        if self.decision != EFFECT:
            return DECISION_CODES[self.decision]
        return {INHIBITING: 1, ENHANCING: 2}.get(self.direction, 3)

    def evidence_text(self):
        if isinstance(self.evidence, ConfidenceRegion):
            return str(self.evidence)
        if self.evidence is None:
            return ""
        return repr(float(self.evidence))


@dataclass
class EvaluationConfig:
    """Settings for running all methods on one dataset."""

    alpha: float = 0.05
    early_day: float = 14.0
    early_window: float = 3.0
    n_starts: int = 20
    l2_weight: float = 1e-3
    logistic_fixed: dict = field(default_factory=lambda: {"capacity": 1e9, "x1_0": 5e4})
    bootstrap: BootstrapPlan = field(default_factory=BootstrapPlan)
    min_boot_records: int = 8
    scan: ScanPolicy = field(default_factory=lambda: ScanPolicy(
        delta=DELTA_CHI1SQ, stop_deviance=1.3 * DELTA_CANTELLI))


# ---------------------------------------------------------------------------
# decision rules


def decide_region(region, method, alpha=0.05, note=""):
    """Effect iff the region excludes zero; direction from the sign."""
    if region.excludes_zero:
        direction = INHIBITING if region.positive else ENHANCING if region.negative else NONE
        return DetectionOutcome(method, EFFECT, direction, region, alpha, note)
    return DetectionOutcome(method, NO_EFFECT, NONE, region, alpha, note)


def decide_pvalue(p, method, alpha=0.05, mean_difference=None, note=""):
    if p < alpha:
        direction = NONE
        if mean_difference is not None:
            direction = INHIBITING if mean_difference > 0 else ENHANCING
        return DetectionOutcome(method, EFFECT, direction, p, alpha, note)
    return DetectionOutcome(method, NO_EFFECT, NONE, p, alpha, note)


def _early_days(data, config):
    return [d for d in data.output_days if abs(d - config.early_day) <= config.early_window]


def paired_t_test(data, output_day, alpha=0.05, method=None):
    """Two-sided paired t-test on input minus output concentrations.

    ``output_day`` is one day or a collection of days pooled together.
    Fewer than two pairs, or identical differences, give a
    ``not-applicable`` outcome.
    """
    days = np.atleast_1d(np.asarray(output_day, dtype=float))
    method = method or f"t{days[0]:g}"
    y0, y1 = data.pairs(days)
    m = y0.size
    if m < 2:
        return DetectionOutcome(method, NOT_APPLICABLE, alpha=alpha,
                                note=f"{m} pair(s) at day(s) {list(days)}")
    diff = y0 - y1
    sd = float(np.std(diff, ddof=1))
    if sd == 0.0:
        return DetectionOutcome(method, NOT_APPLICABLE, alpha=alpha,
                                note="zero-variance differences")
    tau = float(np.mean(diff)) / (sd / math.sqrt(m))
    p = float(2.0 * stats.t.sf(abs(tau), m - 1))
    return decide_pvalue(p, method, alpha, float(np.mean(diff)))


def _exp_regions(data, config, seed):
    obj = Objective("exp", data, l2_weight=config.l2_weight)
    res = fit(obj, starts=config.n_starts, seed=seed)
    curve = profile("theta1", res, obj, config.scan)
    return (confidence_region(curve, DELTA_CHI1SQ), confidence_region(curve, DELTA_CANTELLI),
            curve)


def evaluate_dataset(data, methods=METHODS, alpha=None, config=None, seed=0):
    """Run each requested method; failures become flagged outcomes."""
    config = config or EvaluationConfig()
    alpha = config.alpha if alpha is None else alpha
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    out = {}
    outputs = data.output_days
    has_input = bool(np.any(data.times == data.input_day))
    for m in methods:
        if not outputs or not has_input:
            out[m] = DetectionOutcome(m, NOT_APPLICABLE, alpha=alpha, note="no output records"
                                      if not outputs else "no input records")
    todo = [m for m in methods if m not in out]

    if "t14" in todo:
        days = _early_days(data, config)
        out["t14"] = (paired_t_test(data, days, alpha, "t14") if days else
                      DetectionOutcome("t14", NOT_APPLICABLE, alpha=alpha,
                                       note="no output day near the early day"))
    if "t_end" in todo:
        out["t_end"] = paired_t_test(data, max(outputs), alpha, "t_end")

    exp_methods = [m for m in ("exp_chi1sq", "exp_cantelli") if m in todo]
    if exp_methods:
        try:
            chi, cant, curve = _exp_regions(data, config, seed)
            note = "truncated profile" if curve.truncated else ""
            regions = {"exp_chi1sq": chi, "exp_cantelli": cant}
            for m in exp_methods:
                out[m] = decide_region(regions[m], m, alpha, note)
        except (FitError, ValueError, FloatingPointError) as exc:
            for m in exp_methods:
                out[m] = DetectionOutcome(m, NOT_APPLICABLE, alpha=alpha,
                                          note=f"failed: {exc}")

    if "logistic_boot" in todo:
        m = "logistic_boot"
        if data.n < config.min_boot_records:
            out[m] = DetectionOutcome(m, NOT_APPLICABLE, alpha=alpha,
                                      note=f"n={data.n} < {config.min_boot_records}")
        else:
            plan = config.bootstrap
            if plan.seed != seed:
                plan = BootstrapPlan(**{**plan.__dict__, "seed": seed})
            try:
                res = bootstrap_ci_difference(data, plan, 1.0 - alpha,
                                              fixed=config.logistic_fixed)
                note = f"failed refits={res.n_failed}" if res.n_failed else ""
                out[m] = decide_region(res.region, m, alpha, note)
            except (DesignError, ReliabilityError, FitError, ValueError) as exc:
                out[m] = DetectionOutcome(m, NOT_APPLICABLE, alpha=alpha,
                                          note=f"failed: {exc}")
    return [out[m] for m in methods]


# ---------------------------------------------------------------------------
# simulation-study scoring


@dataclass
class Scoreboard:
    aggregate: list = field(default_factory=list)   # dicts
    matrix: list = field(default_factory=list)      # dicts
    missing: list = field(default_factory=list)

    AGG_FIELDS = ("scenario", "n", "method", "detected", "enhancing", "total")

    def aggregate_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.AGG_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.aggregate)
        return buf.getvalue()

    def matrix_csv(self):
        buf = io.StringIO()
        fields = ["dataset_id", "scenario", "n", "replicate"] + list(METHODS)
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(self.matrix)
        return buf.getvalue()

    def outcomes_csv(self):
        """Long format with the evidence behind every decision."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset_id", "method", "decision", "direction", "evidence", "note"])
        for row in self.matrix:
            for o in row["_outcomes"]:
                w.writerow([row["dataset_id"], o.method, o.decision, o.direction,
                            o.evidence_text(), o.note])
        return buf.getvalue()

    def proportion(self, scenario, n, method):
        for r in self.aggregate:
            if r["scenario"] == scenario and r["n"] == n and r["method"] == method:
                return r["detected"] / r["total"] if r["total"] else math.nan
        raise KeyError((scenario, n, method))

    def decisions(self, method):
        return {r["dataset_id"]: r[method] for r in self.matrix}


def _score_one(entry, data, config, methods):
    seed = int(entry.get("seed", [0])[-1]) if isinstance(entry.get("seed"), list) else 0
    return evaluate_dataset(data, methods, config=config, seed=seed)


def score_study(archive, alpha=0.05, config=None, methods=METHODS, jobs=1):
    """Evaluate every archived dataset and aggregate per (scenario, n, method)."""
    config = config or EvaluationConfig(alpha=alpha)
    config.alpha = alpha
    board = Scoreboard()
    work = []
    for e in archive.entries:
        try:
            work.append((e, archive.get(e["dataset_id"])))
        except (OSError, KeyError, ValueError, StopIteration):
            board.missing.append(e["dataset_id"])
    if jobs > 1:
        results = Parallel(n_jobs=jobs, batch_size=1)(
            delayed(_score_one)(e, d, config, methods) for e, d in work)
    else:
        results = [_score_one(e, d, config, methods) for e, d in work]
    groups = {}
    for (e, _), outcomes in zip(work, results):
        row = {"dataset_id": e["dataset_id"], "scenario": e["scenario"], "n": e["n"],
               "replicate": e["replicate"], "_outcomes": outcomes}
        for o in outcomes:
            row[o.method] = o.code
            g = groups.setdefault((e["scenario"], e["n"], o.method), [0, 0, 0])
            g[0] += o.detected
            g[1] += o.detected and o.direction == ENHANCING
            g[2] += 1
        board.matrix.append(row)
    order = {m: i for i, m in enumerate(METHODS)}
    for (sc, n, m), (det, enh, tot) in sorted(groups.items(),
                                               key=lambda kv: (kv[0][0], kv[0][1], order[kv[0][2]])):
        board.aggregate.append({"scenario": sc, "n": n, "method": m, "detected": det,
                                "enhancing": enh, "total": tot})
    return board


# ---------------------------------------------------------------------------
# sgRNA split


def split_by_sgrna(data):
    """One dataset per sgRNA label, flagged ``single-mouse`` where needed."""
    if data.sgrna_ids is None or any(g in (None, "") for g in data.sgrna_ids):
        raise LabelError("every record needs an sgRNA label")
    labels = list(dict.fromkeys(data.sgrna_ids))
    if len(labels) == 1:
        return [data]
    parts = []
    for g in labels:
        idx = [i for i, lab in enumerate(data.sgrna_ids) if lab == g]
        sub = data.subset(idx, name=f"{data.name}:{g}" if data.name else str(g))
        if sub.paired and sub.n_mice < 2:
            sub = Dataset(sub.times, sub.values, sub.mouse_ids, sub.sgrna_ids, sub.name,
                          sub.input_day, sub.flags + ("single-mouse",))
        parts.append(sub)
    return parts


# ---------------------------------------------------------------------------
# PDX fixtures


def _read_fixture(name):
    text = resources.files("growthtrials").joinpath("data", name).read_text()
    return list(csv.DictReader(io.StringIO(text)))


def _opt_float(s):
    return float(s) if s not in ("", None) else None


@dataclass
class PDXExperiment:
    sample: str
    gene: str
    n_sgrnas: int
    sample_size: int
    max_cells: float
    input_cells: float
    p_day14: float | None
    p_end: float | None
    theta1: float
    ci_theta1_cantelli: ConfidenceRegion
    ci_boot_difference: ConfidenceRegion | None = None

    @property
    def key(self):
        return f"{self.sample} {self.gene}"

    @property
    def logistic_fixed(self):
        """Capacity and input cell number used to pin the logistic model."""
        return {"capacity": self.max_cells, "x1_0": self.input_cells}


def load_pdx_fixtures():
    """The 44 knockout experiments with their published summary results."""
    exp = {(r["sample"], r["gene"]): r for r in _read_fixture("pdx_exp_cantelli.csv")}
    log = {(r["sample"], r["gene"]): r for r in _read_fixture("pdx_logistic.csv")}
    out = []
    for r in _read_fixture("pdx_experiments.csv"):
        k = (r["sample"], r["gene"])
        e = exp[k]
        boot = log.get(k)
        out.append(PDXExperiment(
            r["sample"], r["gene"], int(r["n_sgrnas"]), int(r["sample_size"]),
            float(r["max_cells_million"]) * 1e6, float(r["input_thousands"]) * 1e3,
            _opt_float(r["p_day14"]), _opt_float(r["p_end"]), float(e["theta1"]),
            parse_region(e["ci_theta1"], "cantelli", DELTA_CANTELLI),
            parse_region(boot["ci_boot_difference"], "bootstrap", math.nan)
            if boot else None))
    return out


def chi1sq_from_cantelli(region, mle, delta_from=DELTA_CANTELLI, delta_to=DELTA_CHI1SQ):
    """Approximate a smaller-threshold region from a published larger one.

    Uses a locally quadratic profile around ``mle``: finite distances from
    the estimate shrink by ``sqrt(delta_to / delta_from)``, infinite ends
    stay infinite, and pieces not containing the estimate are dropped.
    """
    factor = math.sqrt(delta_to / delta_from)
    for a, b in region.pieces:
        if a <= mle <= b:
            lo = a if math.isinf(a) else mle - factor * (mle - a)
            hi = b if math.isinf(b) else mle + factor * (b - mle)
            return ConfidenceRegion(((lo, hi),), "chi1sq", delta_to, region.level,
                                    region.domain)
    raise ValueError("estimate lies outside the region")


def evaluate_pdx(experiments=None, alpha=0.05, min_boot_records=8):
    """Decisions of all five methods from the published summaries.

    Returns ``{experiment key: {method: DetectionOutcome}}``.
    """
    experiments = experiments if experiments is not None else load_pdx_fixtures()
    result = {}
    for x in experiments:
        out = {}
        for m, p in (("t14", x.p_day14), ("t_end", x.p_end)):
            out[m] = (decide_pvalue(p, m, alpha) if p is not None else
                      DetectionOutcome(m, NOT_APPLICABLE, alpha=alpha, note="no p-value"))
        cant = x.ci_theta1_cantelli
        out["exp_cantelli"] = decide_region(cant, "exp_cantelli", alpha)
        out["exp_chi1sq"] = decide_region(chi1sq_from_cantelli(cant, x.theta1),
                                          "exp_chi1sq", alpha, "derived from Cantelli region")
        if x.ci_boot_difference is not None and x.sample_size >= min_boot_records:
            out["logistic_boot"] = decide_region(x.ci_boot_difference, "logistic_boot", alpha)
        else:
            out["logistic_boot"] = DetectionOutcome(
                "logistic_boot", NOT_APPLICABLE, alpha=alpha,
                note=f"sample size {x.sample_size} < {min_boot_records}")
        result[x.key] = {m: out[m] for m in METHODS}
    return result


def pdx_summary(decisions):
    """Rows of (method, considered, significant, enhancing)."""
    rows = []
    for m in METHODS:
        outs = [d[m] for d in decisions.values()]
        considered = sum(o.decision != NOT_APPLICABLE for o in outs)
        significant = sum(o.detected for o in outs)
        enhancing = sum(o.detected and o.direction == ENHANCING for o in outs)
        rows.append({"method": m, "considered": considered, "significant": significant,
                     "enhancing": enhancing if m not in ("t14", "t_end") else "-"})
    return rows
