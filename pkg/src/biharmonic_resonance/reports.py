"""JSON reports and CSV tables with fixed numeric precision.

Floats are rounded to ``DIGITS`` significant digits before serialisation, so
identical runs give byte-identical files. Non-finite values become ``null``
and complex numbers become ``{"re": .., "im": ..}``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION

DIGITS = 12


def _round(x: float):
    if not math.isfinite(x):
        return None
    if x == 0:
        return 0.0
    return float(f"{x:.{DIGITS - 1}e}")


def normalize(obj):
    """Convert ``obj`` into JSON-ready builtins at fixed precision."""
    if isinstance(obj, dict):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [normalize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _round(obj.real), "im": _round(obj.imag)}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return normalize(obj.to_dict())
        return normalize(dataclasses.asdict(obj))
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def build_report(subcommand: str, status: str, provenance: dict, result: dict | None = None,
                 diagnostics: dict | None = None, config: dict | None = None) -> dict:
    """Standard report envelope carrying the schema version and provenance."""
    return {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "subcommand": subcommand,
        "status": status,
        "provenance": provenance,
        "config": config or {},
        "result": result or {},
        "diagnostics": diagnostics or {},
    }


def dumps_report(report: dict) -> str:
    return json.dumps(normalize(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(path: str | Path, report: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(report))
    return path


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return f"{x:.{DIGITS - 1}e}" if math.isfinite(x) else "nan"
    return str(x)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a single header line and fixed-precision numbers."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_value(x) for x in row])
    return path


def read_csv(path: str | Path) -> tuple:
    """(header, rows as float arrays) for a table written by :func:`write_csv`."""
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    return header, np.array(rows)


__all__ = [
    "DIGITS",
    "normalize",
    "build_report",
    "dumps_report",
    "write_report",
    "format_value",
    "write_csv",
    "read_csv",
]
