"""CSV ingestion with optional one-hot encoding of categorical columns."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingTarget, NonNumericCell, ParseError
from .forest import FeatureGroups


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...]
    target: str
    groups: FeatureGroups

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.column_names, self.target, self.groups)


def _number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(row, column, f"cannot parse {text!r} as a number") from None
    if math.isnan(value):
        raise NonNumericCell(row, column, "missing values are not supported")
    return value


def parse_csv(text: str, target: str, categorical: Sequence[str] = ()) -> Dataset:
    """Parse CSV text with a header row. Row numbers in errors count the header as row 1.

    Each categorical column with ``k`` levels becomes ``k`` one-hot columns
    named ``column=level`` (levels sorted), and one feature group.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError(1, "", "empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ParseError(1, "", "duplicate column names")
    if target not in header:
        raise MissingTarget(f"target column {target!r} not in header {header}")
    unknown = set(categorical) - set(header)
    if unknown:
        raise ParseError(1, sorted(unknown)[0], "declared categorical column is not in the header")
    body = [r for r in rows[1:] if r]
    for n, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ParseError(n, "", f"expected {len(header)} fields, found {len(r)}")

    levels = {c: sorted({r[header.index(c)].strip() for r in body}) for c in categorical}
    names: list[str] = []
    group_names: list[str] = []
    members: list[tuple[int, ...]] = []
    for c in header:
        if c == target:
            continue
        start = len(names)
        if c in levels:
            names += [f"{c}={lv}" for lv in levels[c]]
        else:
            names.append(c)
        group_names.append(c)
        members.append(tuple(range(start, len(names))))

    X = np.zeros((len(body), len(names)))
    y = np.zeros(len(body))
    t = header.index(target)
    for n, r in enumerate(body):
        line = n + 2
        y[n] = _number(r[t].strip(), line, target)
        out = 0
        for k, c in enumerate(header):
            if k == t:
                continue
            cell = r[k].strip()
            if c in levels:
                X[n, out + levels[c].index(cell)] = 1.0
                out += len(levels[c])
            else:
                X[n, out] = _number(cell, line, c)
                out += 1
    return Dataset(X, y, tuple(names), target, FeatureGroups(tuple(group_names), tuple(members)))


def ingest(path: str | Path, target: str, categorical: Sequence[str] = ()) -> Dataset:
    return parse_csv(Path(path).read_text(), target, categorical)


def to_csv(ds: Dataset) -> str:
    """Numeric CSV of the (encoded) matrix plus the target, floats written with ``repr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(ds.column_names) + [ds.target])
    for row, target in zip(ds.X, ds.y):
        w.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    return buf.getvalue()


def train_test_split(n: int, train_fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(order[:cut]), np.sort(order[cut:])


def matrix_csv(X: np.ndarray, y: np.ndarray, column_names: Sequence[str], target: str = "y") -> str:
    groups = FeatureGroups.singletons(column_names)
    return to_csv(Dataset(np.atleast_2d(X), np.asarray(y), tuple(column_names), target, groups))
