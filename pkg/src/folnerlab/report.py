"""Report envelopes: uniform check rows, deterministic JSON and CSV tables.

Every row names the statement it checks through ``anchor``.  Rows with
``asserted=False`` are measurements and never fail a run.  Wall-clock
timings live only in the ``timing`` sub-object so the rest of the JSON is
byte-stable across runs with the same configuration.
"""

from __future__ import annotations

import csv
import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .rational import fmt

SCHEMA_VERSION = 1


def jsonable(x: Any) -> Any:
    """Convert values to plain JSON types (fractions as ``"p/q"`` strings)."""
    if isinstance(x, Fraction):
        return fmt(x)
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, complex):
        return [jsonable(x.real), jsonable(x.imag)]
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, Path):
        return str(x)
    if x is None or isinstance(x, str):
        return x
    return str(x)


@dataclass
class Row:
    """One checked or measured statement."""

    name: str
    anchor: str
    value: Any = None
    bound: Any = None
    passed: bool | None = None
    asserted: bool = True
    hypothesis: str = "n/a"
    note: str = ""

    def __post_init__(self):
        if not self.anchor:
            raise ValueError("every row needs an anchor")
        if self.hypothesis not in ("holds", "fails", "n/a"):
            raise ValueError("hypothesis status must be holds, fails or n/a")

    @property
    def failed(self) -> bool:
        return self.asserted and self.passed is False

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "hypothesis": self.hypothesis,
            "value": jsonable(self.value),
            "bound": jsonable(self.bound),
            "asserted": self.asserted,
            "passed": self.passed,
            "note": self.note,
        }


def hypothesis_status(flag: bool | None) -> str:
    return "n/a" if flag is None else ("holds" if flag else "fails")


@dataclass
class ReportEnvelope:
    command: str
    config: dict
    rows: list[Row] = field(default_factory=list)
    data: dict = field(default_factory=dict)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    def add(self, row: Row) -> Row:
        self.rows.append(row)
        return row

    def extend(self, rows: Iterable[Row]) -> None:
        self.rows.extend(rows)

    @property
    def ok(self) -> bool:
        return self.error is None and not any(r.failed for r in self.rows)

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return 2
        return 0 if self.ok else 1

    def summary(self) -> dict:
        asserted = [r for r in self.rows if r.asserted]
        return {
            "asserted": len(asserted),
            "passed": sum(1 for r in asserted if r.passed),
            "failed": sum(1 for r in asserted if r.passed is False),
            "measured": len(self.rows) - len(asserted),
        }

    @contextmanager
    def timed(self, label: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timing[label] = round(time.perf_counter() - t0, 6)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "schema": SCHEMA_VERSION,
            "command": self.command,
            "status": "error" if self.error is not None else ("pass" if self.ok else "fail"),
            "error": self.error,
            "config": jsonable(self.config),
            "summary": self.summary(),
            "rows": [r.to_dict() for r in self.rows],
            "data": jsonable(self.data),
        }
        if include_timing:
            out["timing"] = jsonable(self.timing)
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def write(self, out_dir: Path) -> dict[str, Path]:
        """Write ``report.json`` and ``tables.csv``; returns the written paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"report": out_dir / "report.json", "tables": out_dir / "tables.csv"}
        paths["report"].write_text(self.to_json())
        write_tables(paths["tables"], self.tables or {"checks": [r.to_dict() for r in self.rows]})
        return paths


def write_tables(path: Path, tables: dict[str, Sequence[dict]]) -> None:
    """All tables in one CSV, each row prefixed by its table name."""
    columns: list[str] = []
    for rows in tables.values():
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["table", *columns])
        for name in sorted(tables):
            for r in tables[name]:
                w.writerow([name, *[_cell(r.get(c)) for c in columns]])


def _cell(v: Any) -> str:
    v = jsonable(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def strip_timing(report_json: str) -> str:
    """Canonical text of a report with the timing sub-object removed."""
    d = json.loads(report_json)
    d.pop("timing", None)
    return json.dumps(d, sort_keys=True, indent=2)
