"""Cached full simulation study for the acceptance suite.

The 1600-dataset study takes tens of minutes on one core, so its result
tables are stored under ``.acceptance_cache/`` keyed by the default config
digest and a hash of every module that influences the outcome.  Editing
any of those modules invalidates the cache.
"""
from __future__ import annotations

import csv
import hashlib
import os
from pathlib import Path

from growthtrials.cli import main
from growthtrials.config import RunConfig

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / ".acceptance_cache"
PKG = ROOT / "src" / "growthtrials"
RESULT_MODULES = ("models", "optimize", "inference", "fastfit", "profiles", "bootstrap",
                  "simulation", "evaluation", "config", "io")


def study_key(cfg=None):
    cfg = cfg or RunConfig()
    h = hashlib.sha256(cfg.digest().encode())
    for name in RESULT_MODULES:
        h.update((PKG / f"{name}.py").read_bytes())
    return h.hexdigest()[:16]


def study_dir():
    return CACHE / f"study-{study_key()}"


def run_or_load(jobs=None):
    """Matrix rows of the default study, running it first if needed."""
    out = study_dir()
    matrix = out / "matrix.csv"
    if not matrix.exists():
        jobs = jobs or int(os.environ.get("GROWTHTRIALS_JOBS", os.cpu_count() or 1))
        tmp = out.with_name(out.name + ".partial")
        rc = main(["study", "--out", str(tmp), "--jobs", str(jobs)])
        if rc != 0:
            raise RuntimeError(f"study run failed with exit code {rc}")
        tmp.rename(out)
    with open(matrix) as fh:
        rows = list(csv.DictReader(fh))
    with open(out / "aggregate.csv") as fh:
        agg = list(csv.DictReader(fh))
    return rows, agg, out
