"""Column-named sample tables and their CSV serialization."""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

BINARY = "binary"
UNIT = "unit"
KINDS = (BINARY, UNIT)


class DatasetFormatError(ValueError):
    """Malformed dataset file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingColumnError(KeyError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(column)

    def __str__(self) -> str:
        return f"missing column {self.column!r}"


@dataclass(frozen=True)
class Dataset:
    """An n x k table of samples with named, typed columns.

    Binary columns hold only 0/1, unit columns lie in [0, 1]. The value
    matrix is stored read-only so a Dataset can be shared freely.
    """

    columns: tuple[str, ...]
    kinds: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        cols = tuple(self.columns)
        kinds = tuple(self.kinds)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "kinds", kinds)
        if len(set(cols)) != len(cols):
            raise ValueError(f"duplicate column names in {cols}")
        if len(kinds) != len(cols):
            raise ValueError("one kind per column required")
        for k in kinds:
            if k not in KINDS:
                raise ValueError(f"unknown column kind {k!r}")
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(cols):
            raise ValueError(f"values must be n x {len(cols)}, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains non-finite values")
        for j, (name, kind) in enumerate(zip(cols, kinds)):
            col = values[:, j]
            if kind == BINARY and not np.all((col == 0.0) | (col == 1.0)):
                raise ValueError(f"binary column {name!r} has values outside {{0,1}}")
            if kind == UNIT and (np.any(col < 0.0) or np.any(col > 1.0)):
                raise ValueError(f"unit-interval column {name!r} has values outside [0,1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.n

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise MissingColumnError(name) from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def select(self, names: Sequence[str]) -> np.ndarray:
        """Columns ``names`` as an n x len(names) matrix (a copy)."""
        idx = [self.index(c) for c in names]
        return self.values[:, idx]

    def require(self, names: Iterable[str]) -> None:
        for name in names:
            self.index(name)

    def take(self, rows) -> "Dataset":
        return Dataset(self.columns, self.kinds, self.values[rows])

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update("\x1f".join(self.columns).encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.columns == other.columns
            and self.kinds == other.kinds
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    __hash__ = None


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_csv(data: Dataset, dest: str | os.PathLike | IO[str]) -> None:
    """Header of column names, then 0/1 integers or 17-significant-digit decimals."""
    if hasattr(dest, "write"):
        _write_rows(data, dest)
        return
    with open(dest, "w", newline="") as fh:
        _write_rows(data, fh)


def _write_rows(data: Dataset, fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(data.columns)
    binary = [k == BINARY for k in data.kinds]
    for row in data.values:
        writer.writerow(
            [str(int(v)) if b else format_float(v) for v, b in zip(row, binary)]
        )


def read_csv(
    src: str | os.PathLike | IO[str], kinds: dict[str, str] | None = None
) -> Dataset:
    """Parse a dataset CSV.

    Column kinds come from ``kinds`` when given; otherwise a column is binary
    when every entry is a bare ``0`` or ``1`` token and unit-interval else.
    """
    if hasattr(src, "read"):
        text = src.read()
    else:
        with open(src, newline="") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("empty file", line=1) from None
    header = [h.strip() for h in header]
    if not header or any(h == "" for h in header):
        raise DatasetFormatError("empty column name in header", line=1)
    if len(set(header)) != len(header):
        raise DatasetFormatError("duplicate column names in header", line=1)
    k = len(header)
    rows: list[list[float]] = []
    integral = [True] * k
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != k:
            raise DatasetFormatError(f"expected {k} fields, found {len(row)}", line=line)
        parsed = []
        for j, tok in enumerate(row):
            tok = tok.strip()
            try:
                v = float(tok)
            except ValueError:
                raise DatasetFormatError(
                    f"column {header[j]!r}: cannot parse {tok!r} as a number", line=line
                ) from None
            if not np.isfinite(v):
                raise DatasetFormatError(f"column {header[j]!r}: non-finite value", line=line)
            if tok not in ("0", "1"):
                integral[j] = False
            parsed.append(v)
        rows.append(parsed)
    if not rows:
        raise DatasetFormatError("no data rows", line=2)
    values = np.array(rows, dtype=np.float64)
    if kinds is None:
        col_kinds = tuple(BINARY if b else UNIT for b in integral)
    else:
        col_kinds = tuple(kinds.get(name, BINARY if b else UNIT) for name, b in zip(header, integral))
    try:
        return Dataset(tuple(header), col_kinds, values)
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from None
