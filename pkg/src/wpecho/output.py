"""CSV, JSON, manifest and gnuplot emitters.

CSV files carry two header lines (column names, then units) and fixed
formatting, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return f"{value:.12g}"


def write_csv(path: Path, columns) -> Path:
    """Write ``columns`` = [(name, unit, values), ...] as CSV with a two-line header."""
    names = [c[0] for c in columns]
    units = [c[1] for c in columns]
    data = [list(c[2]) for c in columns]
    n = len(data[0]) if data else 0
    if any(len(d) != n for d in data):
        raise ValueError("CSV columns differ in length")
    lines = [",".join(names), ",".join(units)]
    lines += [",".join(_cell(d[i]) for d in data) for i in range(n)]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path: Path):
    """Inverse of :func:`write_csv`: (names, units, rows as lists of strings)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    names, units = lines[0].split(","), lines[1].split(",")
    return names, units, [line.split(",") for line in lines[2:]]


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    return value


def write_json(path: Path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


@dataclass
class RunManifest:
    """Everything needed to reproduce the files of one CLI invocation."""

    command: str
    config: dict
    seeds: dict
    code_version: str
    wall_time_s: float = 0.0
    outputs: list = field(default_factory=list)
    status: str = "ok"

    def add(self, path: Path) -> Path:
        self.outputs.append(str(Path(path).name))
        return path

    def write(self, directory: Path) -> Path:
        return write_json(Path(directory) / "manifest.json", asdict(self))


def write_gnuplot(path: Path, plots) -> Path:
    """Script plotting ``plots`` = [(csv file, x column, [(y column, title), ...]), ...].

    Columns are 1-based; the two header lines are skipped.
    """
    lines = ["set datafile separator ','", "set grid", ""]
    for csv, xcol, series in plots:
        parts = [f"'{csv}' every ::2 using {xcol}:{ycol} with lines title '{title}'"
                 for ycol, title in series]
        lines += [f"set title '{Path(csv).stem}'", "plot " + ", \\\n     ".join(parts),
                  "pause -1", ""]
    path = Path(path)
    path.write_text("\n".join(lines), encoding="utf-8")
    return path
