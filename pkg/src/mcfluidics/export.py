"""CSV and JSON writers.  Output is byte-identical for identical runs."""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path
from typing import Iterable

import numpy as np

from .transport_core import TimeSeries

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ("t_seconds", "species", "concentration_mol_per_m3", "source")


def _fmt(x: float) -> str:
    return repr(float(x))


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def write_traces_csv(path: Path, traces: Iterable[TimeSeries]) -> Path:
    """One row per sample; oracle undershoot is clamped to zero here."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for tr in traces:
            tag = tr.species
            method = tr.meta.get("method") if isinstance(tr.meta, dict) else None
            if method:
                tag = f"{tag}:{method}"
            for t, c in zip(tr.t, np.maximum(tr.c, 0.0)):
                w.writerow((_fmt(t), tag, _fmt(c), tr.source))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_summary(path: Path, summary: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), sort_keys=True, indent=2) + "\n")
    return path


def write_record(record, out_dir: Path) -> list[Path]:
    """One CSV per probe label plus ``summary.json``."""
    out_dir = Path(out_dir)
    written = [write_traces_csv(out_dir / f"{_safe(label)}.csv", traces)
               for label, traces in sorted(record.traces.items())]
    written.append(write_summary(out_dir / "summary.json", record.summary()))
    return written


def write_table(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = ["parameter", "value"]
    extra = sorted({k for r in rows for k in r} - set(keys))
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + extra)
        for r in rows:
            w.writerow([r.get(k, "") if not isinstance(r.get(k), float) else _fmt(r[k])
                        for k in keys + extra])
    return path
