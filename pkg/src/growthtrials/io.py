"""Measurement-file ingestion and export.

Schema (header required)::

    experiment_id,sgrna_id,mouse_id,time_days,concentration

Concentrations below ``FLOOR`` are raised to it and counted in the
report; anything non-numeric, negative or above one is an error that
names the offending line.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .inference import Dataset

__all__ = [
    "COLUMNS",
    "FLOOR",
    "ParseError",
    "EmptyInputError",
    "IngestionReport",
    "ingest",
    "ingest_text",
    "export",
    "export_text",
    "read_dataset_csv",
]

COLUMNS = ("experiment_id", "sgrna_id", "mouse_id", "time_days", "concentration")
FLOOR = 1e-4


class ParseError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class EmptyInputError(ValueError):
    pass


@dataclass
class IngestionReport:
    rows: int = 0
    floored: int = 0
    experiments: dict = field(default_factory=dict)   # id -> record count
    output_days: dict = field(default_factory=dict)   # id -> sorted output days

    def as_dict(self):
        return {"rows": self.rows, "floored": self.floored,
                "experiments": dict(self.experiments),
                "output_days": {k: list(v) for k, v in self.output_days.items()}}


def _number(text, name, line):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"{name} is not a number: {text!r}", line) from None
    if not np.isfinite(value):
        raise ParseError(f"{name} is not finite: {text!r}", line)
    if value < 0:
        raise ParseError(f"{name} is negative: {text!r}", line)
    return value


def ingest_text(text, input_day=0.0):
    """Parse measurement CSV text; returns ``({id: Dataset}, report)``."""
    if not text.strip():
        raise EmptyInputError("input contains no data")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise EmptyInputError("input contains no data")
    header = [h.strip() for h in header]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise ParseError(f"missing columns {missing}; expected {list(COLUMNS)}", 1)
    col = {c: header.index(c) for c in COLUMNS}
    groups = {}
    report = IngestionReport()
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        exp_id = row[col["experiment_id"]].strip()
        if not exp_id:
            raise ParseError("empty experiment_id", line)
        t = _number(row[col["time_days"]], "time_days", line)
        y = _number(row[col["concentration"]], "concentration", line)
        if y > 1:
            raise ParseError(f"concentration above 1: {y!r}", line)
        if y < FLOOR:
            y = FLOOR
            report.floored += 1
        g = groups.setdefault(exp_id, {"t": [], "y": [], "m": [], "s": [], "lines": []})
        g["t"].append(t)
        g["y"].append(y)
        g["m"].append(row[col["mouse_id"]].strip())
        g["s"].append(row[col["sgrna_id"]].strip())
        g["lines"].append(line)
        report.rows += 1
    if not groups:
        raise EmptyInputError("input contains a header but no records")
    out = {}
    for exp_id, g in groups.items():
        mice = tuple(g["m"]) if all(g["m"]) else None
        sg = tuple(g["s"]) if any(g["s"]) else None
        if mice is not None:
            seen = {}
            for m, t, line in zip(g["m"], g["t"], g["lines"]):
                if (m, t) in seen:
                    raise ParseError(f"duplicate record for mouse {m!r} at day {t:g} "
                                     f"(first at line {seen[(m, t)]})", line)
                seen[(m, t)] = line
        try:
            data = Dataset(np.array(g["t"]), np.array(g["y"]), mice, sg, exp_id, input_day)
        except ValueError as exc:
            raise ParseError(f"experiment {exp_id!r}: {exc}") from exc
        out[exp_id] = data
        report.experiments[exp_id] = data.n
        report.output_days[exp_id] = data.output_days
    return out, report


def ingest(path, input_day=0.0):
    """Read a measurement file; returns ``({experiment_id: Dataset}, report)``."""
    text = Path(path).read_text()
    return ingest_text(text, input_day)


def export_text(datasets):
    """CSV text for one Dataset or a mapping of them (round-trips via ingest)."""
    if isinstance(datasets, Dataset):
        datasets = {datasets.name or "experiment": datasets}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for exp_id, d in datasets.items():
        mice = d.mouse_ids or ("",) * d.n
        sg = d.sgrna_ids or ("",) * d.n
        for m, g, t, y in zip(mice, sg, d.times, d.values):
            w.writerow([exp_id, g, m, repr(float(t)), repr(float(y))])
    return buf.getvalue()


def export(datasets, path):
    Path(path).write_text(export_text(datasets))


def read_dataset_csv(path):
    """Single-experiment file as a Dataset."""
    found, _ = ingest(path)
    if len(found) != 1:
        raise ParseError(f"{path}: expected one experiment, found {len(found)}")
    return next(iter(found.values()))
