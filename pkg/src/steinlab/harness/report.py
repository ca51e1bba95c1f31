"""Run reports: flagged inequality rows, tables, and deterministic JSON/CSV output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

SCHEMA_HEADER = "# stein-lab schema v1"


@dataclass
class Check:
    """One asserted inequality: ``ok`` iff ``slack >= 0``."""

    name: str
    slack: float
    context: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(self.slack >= 0)

    def as_dict(self) -> dict:
        return {"name": self.name, "ok": self.ok, "slack": self.slack, **self.context}


@dataclass
class RunReport:
    kind: str
    config: dict
    tables: dict[str, list[dict]] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.ok]

    def check(self, name: str, slack: float, **context) -> Check:
        c = Check(name, float(slack), context)
        self.checks.append(c)
        return c

    def as_dict(self, include_timings: bool = False) -> dict:
        doc = {
            "kind": self.kind,
            "config": self.config,
            "summary": self.summary,
            "passed": self.ok,
            "checks": [c.as_dict() for c in self.checks],
            "tables": self.tables,
        }
        if include_timings:
            doc["timings"] = self.timings
        return doc

    def to_json(self, include_timings: bool = False) -> str:
        """Deterministic JSON; wall-times are left out unless requested."""
        return json.dumps(_jsonable(self.as_dict(include_timings)), indent=2) + "\n"

    def write(self, out_dir: str | Path, stem: str | None = None, include_timings: bool = True) -> list[Path]:
        """Write ``<stem>.json`` and one ``<stem>_<table>.csv`` per table."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        written = [out / f"{stem}.json"]
        written[0].write_text(self.to_json(include_timings))
        for name, rows in self.tables.items():
            path = out / f"{stem}_{name}.csv"
            path.write_text(to_csv(rows))
            written.append(path)
        return written


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, bool) or x is None or isinstance(x, (int, str)):
        return x
    if isinstance(x, Fraction):
        return str(x)
    if hasattr(x, "item"):
        x = x.item()
    if isinstance(x, float):
        return x if math.isfinite(x) else str(x)
    return str(x)


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """CSV text with the schema header line; columns default to the first row's keys."""
    buf = io.StringIO()
    buf.write(SCHEMA_HEADER + "\n")
    if not rows and columns is None:
        return buf.getvalue()
    cols = list(columns if columns is not None else rows[0].keys())
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_cell(row.get(c, "")) for c in cols])
    return buf.getvalue()
