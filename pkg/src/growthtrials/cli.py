"""Command-line entry point: ``growthtrials {simulate,fit,profile,bootstrap,evaluate,study}``.

Every run writes plot-ready CSV tables plus ``run.json`` (command, config,
config digest, seed, library versions, output checksums) and
``config.json`` (re-runnable with ``--config``) into the output directory.
Failures exit non-zero and print ``{"error": {"category": ..., "message": ...}}``
on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import DesignError, ReliabilityError, bootstrap_ci_difference, pp_calibration
from .config import ConfigError, load_config
from .evaluation import (METHODS, LabelError, evaluate_dataset, evaluate_pdx, pdx_summary,
                         score_study, split_by_sgrna)
from .inference import MODELS, FitError, Objective, fit
from .io import EmptyInputError, ParseError, ingest
from .models import IntegrationError, InvalidParameterError
from .profiles import ConfidenceRegion, curves_to_csv, profile_parameters
from .simulation import ResourceError, run_study

__all__ = ["main", "build_parser", "CLIError", "EXIT_CODES"]

EXIT_CODES = {
    "internal": 1,
    "usage": 2,
    "input": 3,
    "config": 4,
    "design": 5,
    "numerical": 6,
    "resource": 7,
}


class CLIError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _category(exc):
    if isinstance(exc, CLIError):
        return exc.category
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (ParseError, EmptyInputError, LabelError, FileNotFoundError,
                        IsADirectoryError, PermissionError)):
        return "input"
    if isinstance(exc, DesignError):
        return "design"
    if isinstance(exc, (FitError, IntegrationError, ReliabilityError)):
        return "numerical"
    if isinstance(exc, ResourceError):
        return "resource"
    if isinstance(exc, (InvalidParameterError, ValueError)):
        return "input"
    return "internal"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# output helpers (single writer)


class _Outputs:
    def __init__(self, root):
        self.root = Path(root)
        self.files = {}

    def write(self, name, text):
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def table(self, name, fieldnames, rows):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n",
                           extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
        return self.write(name, buf.getvalue())

    def manifest(self, command, argv, cfg):
        import numba
        import scipy
        info = {
            "command": command,
            "argv": list(argv),
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "versions": {"growthtrials": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "numba": numba.__version__},
            "outputs": dict(sorted(self.files.items())),
        }
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "config.json").write_text(cfg.to_json())
        (self.root / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def _num(x):
    return repr(float(x))


def _load_experiments(args):
    found, report = ingest(args.input)
    if args.experiment:
        missing = [e for e in args.experiment if e not in found]
        if missing:
            raise CLIError("input", f"experiments {missing} not in {args.input}; "
                                    f"available: {sorted(found)}")
        found = {e: found[e] for e in args.experiment}
    if getattr(args, "split_sgrna", False):
        split = {}
        for data in found.values():
            for part in split_by_sgrna(data):
                split[part.name] = part
        found = split
    return found, report


def _objective(cfg, data, l2_weight=None):
    fixed = dict(cfg.logistic_fixed) if cfg.model == "logistic" else None
    w = cfg.fit.l2_weight if l2_weight is None else l2_weight
    return Objective(cfg.model, data, fixed=fixed, l2_weight=w)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, args, out):
    specs = cfg.scenario_grid()
    archive = run_study(specs, seed=cfg.seed, out_dir=out.root / "study", jobs=cfg.jobs)
    rows = [{k: e[k] for k in ("dataset_id", "scenario", "n", "replicate", "regenerated")}
            for e in archive.entries]
    out.table("datasets.csv", ["dataset_id", "scenario", "n", "replicate", "regenerated"], rows)
    print(f"simulated {len(archive)} datasets in {len(specs)} cells -> {out.root / 'study'}")
    return archive


def cmd_fit(cfg, args, out):
    experiments, report = _load_experiments(args)
    names = MODELS[cfg.model].names
    rows = []
    for exp_id, data in experiments.items():
        obj = _objective(cfg, data)
        res = fit(obj, starts=cfg.fit.n_starts, seed=cfg.seed)
        for name in names:
            rows.append({"experiment_id": exp_id, "model": cfg.model, "parameter": name,
                         "estimate": _num(res.estimate[name]),
                         "fixed": name not in obj.free_names, "loglik": _num(res.loglik),
                         "converged_starts": res.converged_starts,
                         "n_starts": res.n_starts})
        est = ", ".join(f"{n}={res.estimate[n]:.6g}" for n in names)
        print(f"{exp_id}: {est}  loglik={res.loglik:.6f}")
    out.table("estimates.csv", ["experiment_id", "model", "parameter", "estimate", "fixed",
                                "loglik", "converged_starts", "n_starts"], rows)
    out.write("ingestion.json", json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    return rows


def cmd_profile(cfg, args, out):
    experiments, _ = _load_experiments(args)
    delta = cfg.delta()
    scan = cfg.scan.policy(delta)
    curves_text, region_rows, verdict_rows = [], [], []
    for exp_id, data in experiments.items():
        obj = _objective(cfg, data)
        res = fit(obj, starts=cfg.fit.n_starts, seed=cfg.seed)
        params = args.parameter or obj.free_names
        unknown = set(params) - set(obj.free_names)
        if unknown:
            raise CLIError("usage", f"cannot profile {sorted(unknown)}; free parameters "
                                    f"are {obj.free_names}")
        results = profile_parameters(res, obj, params, delta, scan, cfg.scan.flat_tol)
        text = curves_to_csv([r.curve for r in results.values()])
        curves_text.append("\n".join(f"{exp_id},{line}" for line in text.splitlines()[1:]))
        for name, r in results.items():
            for row in r.region.to_rows(name):
                region_rows.append({"experiment_id": exp_id, **row})
            verdict_rows.append({"experiment_id": exp_id, "parameter": name,
                                 "estimate": _num(r.curve.mle_value),
                                 "verdict": r.verdict.kind, "evidence": r.verdict.evidence,
                                 "flatness": _num(r.curve.flatness),
                                 "truncated": r.curve.truncated, "region": str(r.region)})
            print(f"{exp_id} {name}: {r.region}  [{r.verdict.kind}]")
    body = "\n".join(t for t in curves_text if t)
    out.write("profiles.csv", "experiment_id,parameter,q,profile_loglik\n"
              + (body + "\n" if body else ""))
    out.table("regions.csv", ("experiment_id",) + ConfidenceRegion.FIELDS, region_rows)
    out.table("identifiability.csv", ["experiment_id", "parameter", "estimate", "verdict",
                                      "evidence", "flatness", "truncated", "region"],
              verdict_rows)
    return verdict_rows


def _calibration_parameters(cfg, args):
    if args.pp_parameter:
        return list(args.pp_parameter)
    if cfg.calibration.parameters:
        return list(cfg.calibration.parameters)
    return ["theta1"] if cfg.model == "exp" else ["lambda1", "lambda2"]


def cmd_bootstrap(cfg, args, out):
    experiments, _ = _load_experiments(args)
    plan = cfg.bootstrap_plan()
    ci_rows, rep_rows, pp_rows, pp_points = [], [], [], []
    for exp_id, data in experiments.items():
        res = bootstrap_ci_difference(data, plan, 1.0 - cfg.alpha, fixed=cfg.logistic_fixed)
        for row in res.region.to_rows("lambda2-lambda1"):
            ci_rows.append({"experiment_id": exp_id, "estimate": _num(res.estimate),
                            "n_failed": res.n_failed, **row})
        rep_rows.extend({"experiment_id": exp_id, "replicate": i, "difference": _num(v)}
                        for i, v in enumerate(res.replicates))
        print(f"{exp_id} lambda2-lambda1: {res.estimate:.6g}  CI {res.region}"
              f"  (failed refits {res.n_failed})")
        if args.no_calibration:
            continue
        fixed = dict(cfg.logistic_fixed) if cfg.model == "logistic" else None
        for param in _calibration_parameters(cfg, args):
            curve = pp_calibration(data, cfg.model, param, n_boot=cfg.calibration.n_boot,
                                   seed=cfg.seed, fixed=fixed, n_starts=cfg.fit.n_starts,
                                   jobs=cfg.jobs)
            pp_rows.append({"experiment_id": exp_id, "model": cfg.model, "parameter": param,
                            "classification": curve.classification,
                            "band_halfwidth": _num(curve.band_halfwidth),
                            "n_ratios": curve.empirical_ratios.size,
                            "n_failed": curve.n_failed})
            theo, emp = curve.points()
            for r, a, b in zip(curve.empirical_ratios, theo, emp):
                pp_points.append({"experiment_id": exp_id, "parameter": param,
                                  "ratio": _num(r), "chi2_cdf": _num(a), "ecdf": _num(b)})
            print(f"{exp_id} pp-calibration {cfg.model}/{param}: {curve.classification}")
    out.table("bootstrap_ci.csv", ["experiment_id", "estimate", "n_failed"]
              + list(ConfidenceRegion.FIELDS), ci_rows)
    out.table("bootstrap_replicates.csv", ["experiment_id", "replicate", "difference"],
              rep_rows)
    if not args.no_calibration:
        out.table("pp_summary.csv", ["experiment_id", "model", "parameter", "classification",
                                     "band_halfwidth", "n_ratios", "n_failed"], pp_rows)
        out.table("pp_points.csv", ["experiment_id", "parameter", "ratio", "chi2_cdf", "ecdf"],
                  pp_points)
    return ci_rows


_OUTCOME_FIELDS = ["experiment_id", "method", "decision", "direction", "evidence", "note"]


def _outcome_row(exp_id, o):
    return {"experiment_id": exp_id, "method": o.method, "decision": o.decision,
            "direction": o.direction, "evidence": o.evidence_text(), "note": o.note}


def cmd_evaluate(cfg, args, out):
    if args.pdx and args.input:
        raise CLIError("usage", "--pdx evaluates the bundled fixtures; drop the input file "
                                "or the --pdx flag")
    if not args.pdx and not args.input:
        raise CLIError("usage", "evaluate needs an input file or --pdx")
    if args.pdx:
        decisions = evaluate_pdx(alpha=cfg.alpha, min_boot_records=cfg.bootstrap.min_records)
    else:
        experiments, _ = _load_experiments(args)
        ecfg = cfg.evaluation_config()
        decisions = {}
        for exp_id, data in experiments.items():
            outcomes = evaluate_dataset(data, METHODS, config=ecfg, seed=cfg.seed)
            decisions[exp_id] = {o.method: o for o in outcomes}
    rows = [_outcome_row(k, o) for k, d in decisions.items() for o in d.values()]
    out.table("outcomes.csv", _OUTCOME_FIELDS, rows)
    summary = pdx_summary(decisions)
    out.table("summary.csv", ["method", "considered", "significant", "enhancing"], summary)
    print(f"{'method':<14}{'considered':>11}{'significant':>12}{'enhancing':>10}")
    for r in summary:
        print(f"{r['method']:<14}{r['considered']:>11}{r['significant']:>12}"
              f"{r['enhancing']:>10}")
    return summary


def cmd_study(cfg, args, out):
    archive = cmd_simulate(cfg, args, out)
    board = score_study(archive, alpha=cfg.alpha, config=cfg.evaluation_config(),
                        jobs=cfg.jobs)
    out.write("aggregate.csv", board.aggregate_csv())
    out.write("matrix.csv", board.matrix_csv())
    out.write("outcomes.csv", board.outcomes_csv())
    for r in board.aggregate:
        print(f"{r['scenario']:<10} n={r['n']:<3} {r['method']:<14}"
              f"{r['detected']:>4}/{r['total']}")
    return board


COMMANDS = {
    "simulate": (cmd_simulate, "generate the scenario-grid datasets"),
    "fit": (cmd_fit, "maximum-likelihood fit of each experiment"),
    "profile": (cmd_profile, "profile likelihoods, confidence regions, identifiability"),
    "bootstrap": (cmd_bootstrap, "bootstrap CI for lambda2-lambda1 and pp-calibration"),
    "evaluate": (cmd_evaluate, "run every detection method per experiment"),
    "study": (cmd_study, "simulate, evaluate and score the scenario grid"),
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--alpha", type=float, help="significance level")
    common.add_argument("--model", choices=("exp", "logistic"))
    common.add_argument("--threshold", choices=("chi1sq", "cantelli"))
    common.add_argument("--jobs", type=int, help="worker processes (results do not change)")
    common.add_argument("--out", help="output directory")

    parser = _Parser(prog="growthtrials", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name in ("fit", "profile", "bootstrap", "evaluate"):
            p.add_argument("input", nargs="?" if name == "evaluate" else None,
                           help="measurement CSV file")
            p.add_argument("--experiment", action="append",
                           help="restrict to this experiment id (repeatable)")
            p.add_argument("--split-sgrna", action="store_true",
                           help="treat each sgRNA of an experiment separately")
        if name == "profile":
            p.add_argument("--parameter", action="append",
                           help="profile only this parameter (repeatable)")
        if name == "bootstrap":
            p.add_argument("--pp-parameter", action="append",
                           help="pp-calibrate this parameter of --model (repeatable)")
            p.add_argument("--no-calibration", action="store_true",
                           help="skip the pp-calibration")
        if name == "evaluate":
            p.add_argument("--pdx", action="store_true",
                           help="evaluate the bundled PDX summary tables")
    return parser


def _resolve_config(args):
    cfg = load_config(args.config)
    for key in ("seed", "alpha", "model", "threshold", "jobs", "out"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        cfg = _resolve_config(args)
        if args.command in ("fit", "profile", "bootstrap") or getattr(args, "input", None):
            if not Path(args.input).is_file():
                raise CLIError("input", f"input file not found: {args.input}")
        out = _Outputs(cfg.out)
        COMMANDS[args.command][0](cfg, args, out)
        out.manifest(args.command, argv, cfg)
    except SystemExit:
        raise
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - every failure maps to a category
        cat = _category(exc)
        payload = {"error": {"category": cat, "message": str(exc),
                             "type": type(exc).__name__}}
        print(json.dumps(payload), file=sys.stderr)
        return EXIT_CODES[cat]
    return 0


if __name__ == "__main__":
    sys.exit(main())
