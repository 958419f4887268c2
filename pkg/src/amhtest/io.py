"""CSV ingestion, derived features, and JSON/CSV serialisation."""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import InvalidDataError
from .hybrid import TestOutcome
from .model import Dataset
from .simulation import PowerTable


@dataclass(frozen=True)
class CsvSchema:
    response: str = "y"
    delimiter: str = ","


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InvalidDataError(f"non-numeric cell {text!r} at row {row}, column {column!r}") from None
    if not math.isfinite(value):
        raise InvalidDataError(f"non-finite cell {text!r} at row {row}, column {column!r}")
    return value


def read_csv(stream: TextIO, schema: CsvSchema = CsvSchema()) -> Dataset:
    reader = csv.reader(stream, delimiter=schema.delimiter)
    header = next(reader, None)
    if header is None or not any(h.strip() for h in header):
        raise InvalidDataError("empty file: a header row is required")
    header = [h.strip() for h in header]
    if schema.response not in header:
        raise InvalidDataError(f"response column {schema.response!r} not found in header {header}")
    yi = header.index(schema.response)
    covariates = [h for i, h in enumerate(header) if i != yi]
    xs, ys = [], []
    # row numbers count the header as row 1
    for rownum, cells in enumerate(reader, start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise InvalidDataError(f"row {rownum} has {len(cells)} cells, expected {len(header)}")
        vals = [_parse_cell(c.strip(), rownum, header[i]) for i, c in enumerate(cells)]
        ys.append(vals[yi])
        xs.append([v for i, v in enumerate(vals) if i != yi])
    if not ys:
        raise InvalidDataError("empty file: no data rows")
    if not covariates:
        raise InvalidDataError("no covariate columns")
    return Dataset(np.array(xs, dtype=float), np.array(ys, dtype=float), names=tuple(covariates))


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Read a headed CSV; the response column is removed and the rest become covariates in file order."""
    with open(path, newline="", encoding="utf-8") as fh:
        return read_csv(fh, schema)


# ------------------------------------------------------------------ #
# Derived features
# ------------------------------------------------------------------ #

_UNARY = {
    "identity": lambda v: v,
    "square": lambda v: v * v,
    "cube": lambda v: v**3,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "tanh": np.tanh,
}

_TERM_RE = re.compile(r"\s*([a-z]+)\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\)\s*")


@dataclass(frozen=True)
class Term:
    """A derived column; indices are 1-based covariate positions."""

    op: str
    i: int
    j: int | None = None

    def __str__(self) -> str:
        return f"{self.op}({self.i})" if self.j is None else f"{self.op}({self.i},{self.j})"


def parse_recipe(text: str) -> list[Term]:
    """Parse ``"square(5), product(5,6)"`` into terms."""
    terms = []
    for m in _TERM_RE.finditer(text):
        op, i, j = m.group(1), int(m.group(2)), m.group(3)
        if op == "product":
            if j is None:
                raise ValueError(f"product needs two indices: {m.group(0).strip()}")
            terms.append(Term(op, i, int(j)))
        elif op in _UNARY:
            if j is not None:
                raise ValueError(f"{op} takes one index")
            terms.append(Term(op, i))
        else:
            raise ValueError(f"unknown term {op!r}")
    leftover = _TERM_RE.sub("", text).replace(",", "").strip()
    if leftover:
        raise ValueError(f"could not parse recipe fragment {leftover!r}")
    return terms


def feature_expand(data: Dataset, recipe: Sequence[Term | str]) -> Dataset:
    """Append derived columns to the covariates."""
    terms = [t for item in recipe for t in (parse_recipe(item) if isinstance(item, str) else [item])]
    cols, names = [], list(data.names) or [f"x{i + 1}" for i in range(data.p)]
    for t in terms:
        for idx in (t.i, t.j):
            if idx is not None and not 1 <= idx <= data.p:
                raise InvalidDataError(f"term {t} refers to column {idx} but there are {data.p}")
        if t.op == "product":
            cols.append(data.x[:, t.i - 1] * data.x[:, t.j - 1])
        else:
            cols.append(_UNARY[t.op](data.x[:, t.i - 1]))
        names.append(str(t))
    if not cols:
        return data
    return Dataset(np.column_stack([data.x, *cols]), data.y, names=tuple(names))


# ------------------------------------------------------------------ #
# Serialisation
# ------------------------------------------------------------------ #


def outcome_to_json(outcome: TestOutcome, **extra) -> str:
    # json writes floats with repr, the shortest string that round-trips exactly
    payload = asdict(outcome)
    payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True)


def outcome_from_json(text: str) -> TestOutcome:
    payload = json.loads(text)
    fields = {f for f in TestOutcome.__dataclass_fields__}
    kwargs = {k: v for k, v in payload.items() if k in fields}
    kwargs["theta_hat"] = tuple(kwargs["theta_hat"])
    return TestOutcome(**kwargs)


POWER_COLUMNS = (
    "study", "n", "p", "covariance", "a", "replications", "failures",
    "rejections", "rejection_rate", "zheng_rejections", "zheng_rejection_rate",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_power_table(table: PowerTable, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(POWER_COLUMNS)
    for row in table.rows:
        writer.writerow([_fmt(getattr(row, c)) for c in POWER_COLUMNS])


def power_table_sidecar(table: PowerTable) -> dict:
    return {
        "level": table.level,
        "seed": table.seed,
        "rows": [
            {
                "study": r.study,
                "n": r.n,
                "p": r.p,
                "covariance": r.covariance,
                "a": r.a,
                "replications": r.replications,
                "failures": r.failures,
                "q_hat_histogram": list(r.q_hat_histogram),
            }
            for r in table.rows
        ],
    }


def write_power_curve(table: PowerTable, stream: TextIO) -> None:
    """Long-format ``x,y`` rows per test: departure ``a`` against rejection rate."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["study", "n", "p", "covariance", "test", "a", "rejection_rate"])
    for test, attr in (("T_n", "rejection_rate"), ("T_Zh", "zheng_rejection_rate")):
        for r in table.rows:
            writer.writerow([r.study, r.n, r.p, r.covariance, test, _fmt(r.a), _fmt(getattr(r, attr))])


def read_power_table(stream: TextIO) -> list[dict]:
    rows = []
    for rec in csv.DictReader(stream):
        rows.append(
            {
                k: (v if k == "covariance" else float(v) if "." in v or "e" in v or v == "nan" else int(v))
                for k, v in rec.items()
            }
        )
    return rows
