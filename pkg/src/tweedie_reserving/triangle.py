"""Incremental claims run-off triangles and CSV ingestion.

A triangle of dimension ``I`` holds incremental payments ``Y[i, j]`` for
accident years ``i`` and development years ``j`` on the upper set
``i + j <= I``; the lower set ``i + j > I`` is what reserving predicts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["Triangle", "TriangleParseError", "load_triangle",
           "lower_triangle_indices", "upper_triangle_indices",
           "triangle_to_csv"]


class TriangleParseError(ValueError):
    """Malformed triangle CSV; carries a 1-based row/column location."""

    def __init__(self, message: str, row: int | None = None,
                 col: int | None = None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {col}" if col is not None else "") + ")"
        super().__init__(message + loc)
        self.row = row
        self.col = col


@dataclass(frozen=True)
class Triangle:
    """Immutable upper run-off triangle of non-negative payments.

    ``rows[i]`` holds ``Y[i, 0] .. Y[i, I - i]``.  Values are stored as-is
    at full double precision; no scaling is applied to inputs.
    """

    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        n = len(self.rows)
        if n == 0:
            raise ValueError("triangle must have at least one row")
        for i, row in enumerate(self.rows):
            if len(row) != n - i:
                raise ValueError(
                    f"row {i} has {len(row)} cells, expected {n - i}")
            for j, v in enumerate(row):
                if not np.isfinite(v):
                    raise ValueError(f"non-finite payment at ({i}, {j})")
                if v < 0:
                    raise ValueError(f"negative payment at ({i}, {j}): {v}")

    @property
    def I(self) -> int:  # noqa: E743 - domain index name
        return len(self.rows) - 1

    @property
    def n_cells(self) -> int:
        n = len(self.rows)
        return n * (n + 1) // 2

    def cell(self, i: int, j: int) -> float:
        if not (0 <= i <= self.I and 0 <= j <= self.I and i + j <= self.I):
            raise KeyError(f"({i}, {j}) is not an observed cell")
        return self.rows[i][j]

    @property
    def cells(self) -> dict[tuple[int, int], float]:
        """Mapping (i, j) -> payment over the observed cells."""
        return {(i, j): v for i, row in enumerate(self.rows)
                for j, v in enumerate(row)}

    def total(self) -> float:
        return float(sum(sum(row) for row in self.rows))

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[float]]) -> "Triangle":
        return cls(tuple(tuple(float(v) for v in row) for row in rows))


def load_triangle(source) -> Triangle:
    """Parse a triangle from CSV text.

    ``source`` may be a path or an open text stream.  Row ``i`` must hold
    exactly ``I - i + 1`` decimal values; an optional single header row is
    skipped when its first token is not numeric.  Empty fields are an
    error, not a zero.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_triangle(fh)
    lines = [ln.strip() for ln in source.read().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise TriangleParseError("empty triangle CSV")

    start = 0
    first = lines[0].split(",")[0].strip()
    try:
        float(first)
    except ValueError:
        start = 1
        if len(lines) == 1:
            raise TriangleParseError("triangle CSV holds only a header row")

    body = lines[start:]
    n = len(body)
    rows: list[list[float]] = []
    for r, line in enumerate(body):
        tokens = line.split(",")
        expected = n - r
        if len(tokens) != expected:
            raise TriangleParseError(
                f"expected {expected} values, found {len(tokens)}",
                row=start + r + 1)
        row: list[float] = []
        for c, tok in enumerate(tokens):
            tok = tok.strip()
            if not tok:
                raise TriangleParseError(
                    "empty field (zero payments must be written as 0)",
                    row=start + r + 1, col=c + 1)
            try:
                v = float(tok)
            except ValueError:
                raise TriangleParseError(
                    f"non-numeric token {tok!r}", row=start + r + 1, col=c + 1)
            if not np.isfinite(v):
                raise TriangleParseError(
                    f"non-finite value {tok!r}", row=start + r + 1, col=c + 1)
            if v < 0:
                raise TriangleParseError(
                    f"negative payment {tok!r}", row=start + r + 1, col=c + 1)
            row.append(v)
        rows.append(row)
    return Triangle.from_rows(rows)


def triangle_to_csv(t: Triangle, stream=None) -> str:
    """Serialize with shortest round-tripping decimal literals."""
    text = "\n".join(",".join(repr(v) for v in row) for row in t.rows) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def upper_triangle_indices(t: Triangle) -> list[tuple[int, int]]:
    """Observed cells (i + j <= I) in row-major order."""
    return [(i, j) for i in range(t.I + 1) for j in range(t.I + 1 - i)]


def lower_triangle_indices(t: Triangle) -> list[tuple[int, int]]:
    """Cells to predict (i + j > I, i <= I) in row-major order."""
    I = t.I
    return [(i, j) for i in range(I + 1) for j in range(I + 1 - i, I + 1)]
