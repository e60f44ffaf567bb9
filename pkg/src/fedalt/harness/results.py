"""Result rows and their CSV/JSON emission."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..exceptions import InputError

CSV_COLUMNS = ("experiment_id", "seed", "family", "m", "N", "d", "R2_planted", "R2_mode", "algorithm",
               "lambda", "T", "K_T", "aer", "ier_max", "stderr", "wall_ms")
_FLOATS = {"R2_planted", "lambda", "aer", "ier_max", "stderr", "wall_ms"}
_INTS = {"seed", "m", "N", "d", "T", "K_T"}
SCHEMA_VERSION = 1


@dataclass
class ResultRow:
    experiment_id: str
    seed: int
    family: str
    m: int
    N: int
    d: int
    R2_planted: float
    R2_mode: str
    algorithm: str
    lam: float
    T: int
    K_T: int
    aer: float
    ier_max: float
    stderr: float
    wall_ms: Optional[float] = None
    ier_client: Optional[list] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("R2_planted", "lam", "aer", "ier_max", "stderr"):
            if not math.isfinite(getattr(self, name)):
                raise InputError(f"{name} must be finite")

    def as_record(self) -> dict:
        rec = {c: getattr(self, "lam" if c == "lambda" else c) for c in CSV_COLUMNS}
        if self.ier_client is not None:
            rec["ier_client"] = list(self.ier_client)
        return rec


def _cell(name, value) -> str:
    if value is None:
        return ""
    if name in _FLOATS:
        return repr(float(value))
    return str(value)


def to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        rec = r.as_record()
        writer.writerow([_cell(c, rec[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def to_json(rows) -> str:
    return json.dumps({"schema": "ResultTable", "version": SCHEMA_VERSION, "columns": list(CSV_COLUMNS),
                       "rows": [r.as_record() for r in rows]}, indent=1) + "\n"


def _row_from_record(rec: dict) -> ResultRow:
    kw = {("lam" if c == "lambda" else c): rec[c] for c in CSV_COLUMNS}
    kw["ier_client"] = rec.get("ier_client")
    return ResultRow(**kw)


def parse_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise InputError("unexpected CSV header")
    rows = []
    for cells in reader:
        rec = {}
        for c, v in zip(CSV_COLUMNS, cells):
            if c in _FLOATS:
                rec[c] = None if v == "" else float(v)
            elif c in _INTS:
                rec[c] = int(v)
            else:
                rec[c] = v
        rows.append(_row_from_record(rec))
    return rows


def parse_json(text: str) -> list:
    obj = json.loads(text)
    if obj.get("schema") != "ResultTable" or obj.get("version") != SCHEMA_VERSION:
        raise InputError("not a result table of a supported version")
    return [_row_from_record(rec) for rec in obj["rows"]]


def emit_results(rows, path, fmt: str = "csv") -> None:
    """Write ``rows`` to ``path`` as UTF-8 with LF line endings.

    An empty table is an error and leaves the file system untouched.
    """
    rows = list(rows)
    if not rows:
        raise InputError("refusing to write an empty result table")
    if fmt == "csv":
        text = to_csv(rows)
    elif fmt == "json":
        text = to_json(rows)
    else:
        raise InputError(f"unknown format {fmt!r}")
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def strip_timing(rows) -> list:
    out = []
    for r in rows:
        kw = {f.name: getattr(r, f.name) for f in fields(r)}
        kw["wall_ms"] = None
        out.append(ResultRow(**kw))
    return out
