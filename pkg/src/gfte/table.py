"""Domain types for tables, cells, spans and pairwise relations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np


class TableError(ValueError):
    """Raised when a table or cell is used in a way its invariants forbid."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box; origin top-left, y grows downward."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x0, self.y0, self.x1, self.y1))

    def has_area(self) -> bool:
        return self.x0 < self.x1 and self.y0 < self.y1

    def contains(self, other: "BBox", tol: float = 1e-9) -> bool:
        return (
            other.x0 >= self.x0 - tol
            and other.y0 >= self.y0 - tol
            and other.x1 <= self.x1 + tol
            and other.y1 <= self.y1 + tol
        )

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def scaled(self, s: float) -> "BBox":
        return BBox(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class Cell:
    id: int
    text: str
    bbox: BBox
    row_start: int
    row_end: int
    col_start: int
    col_end: int
    placeholder: bool = False

    @property
    def rows(self) -> tuple[int, int]:
        return self.row_start, self.row_end

    @property
    def cols(self) -> tuple[int, int]:
        return self.col_start, self.col_end

    @property
    def row_span(self) -> int:
        return self.row_end - self.row_start + 1

    @property
    def col_span(self) -> int:
        return self.col_end - self.col_start + 1

    @property
    def is_merged(self) -> bool:
        return self.row_span > 1 or self.col_span > 1


@dataclass(frozen=True)
class TableInstance:
    cells: tuple[Cell, ...]
    image: np.ndarray = field(compare=False, repr=False)
    table_bbox: BBox
    n_rows: int
    n_cols: int
    unit: Optional[str] = None
    source_id: str = ""

    def __post_init__(self):
        # tuple() so callers may pass lists without breaking immutability
        object.__setattr__(self, "cells", tuple(self.cells))

    def cell(self, cell_id: int) -> Cell:
        for c in self.cells:
            if c.id == cell_id:
                return c
        raise KeyError(cell_id)

    def cells_by_id(self) -> dict[int, Cell]:
        return {c.id: c for c in self.cells}

    @property
    def n_merged(self) -> int:
        return sum(1 for c in self.cells if c.is_merged)


class RelationKind(Enum):
    SAME_ROW = "same_row"
    SAME_COL = "same_col"
    UNRELATED = "unrelated"


@dataclass(frozen=True)
class EdgeSample:
    """Canonical undirected candidate edge with optional labels."""

    src: int
    dst: int
    label_h: Optional[bool] = None
    label_v: Optional[bool] = None

    def __post_init__(self):
        if self.src == self.dst:
            raise TableError(f"self-loop on cell {self.src}")
        if self.src > self.dst:
            raise TableError(f"edge ({self.src}, {self.dst}) is not in canonical src < dst order")

    @property
    def kind(self) -> RelationKind:
        if self.label_h:
            return RelationKind.SAME_ROW
        if self.label_v:
            return RelationKind.SAME_COL
        return RelationKind.UNRELATED

    def with_labels(self, label_h: bool, label_v: bool) -> "EdgeSample":
        return EdgeSample(self.src, self.dst, bool(label_h), bool(label_v))


def canonical_edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Violation:
    code: str
    cell_ids: tuple[int, ...]
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(f"[{v.code}] {v.message}" for v in self.violations)


def _intervals_intersect(a0: int, a1: int, b0: int, b1: int) -> bool:
    return a0 <= b1 and b0 <= a1


def validate_table(t: TableInstance) -> ValidationReport:
    """Collect every invariant violation of ``t``; never raises."""
    out: list[Violation] = []

    def add(code, ids, msg):
        out.append(Violation(code, tuple(ids), msg))

    if t.n_rows < 1 or t.n_cols < 1:
        add("grid", [], f"grid dimensions must be positive, got {t.n_rows}x{t.n_cols}")
    tb = t.table_bbox
    if not tb.is_finite() or not tb.has_area():
        add("table_bbox", [], f"table bbox {tb.as_list()} must be finite with positive area")

    seen: dict[int, int] = {}
    for c in t.cells:
        seen[c.id] = seen.get(c.id, 0) + 1
    for cid, n in sorted(seen.items()):
        if n > 1:
            add("duplicate_id", [cid], f"cell id {cid} appears {n} times")

    for c in t.cells:
        if c.row_start < 0 or c.col_start < 0:
            add("negative_span", [c.id], f"cell {c.id} has a negative span index")
        if c.row_start > c.row_end or c.col_start > c.col_end:
            add("span_order", [c.id], f"cell {c.id} has start > end in its span")
        if c.row_end >= t.n_rows or c.col_end >= t.n_cols:
            add(
                "out_of_grid",
                [c.id],
                f"cell {c.id} span rows {c.rows} cols {c.cols} exceeds grid {t.n_rows}x{t.n_cols}",
            )
        if not c.bbox.is_finite():
            add("bbox_nonfinite", [c.id], f"cell {c.id} bbox has non-finite coordinates")
        elif not c.bbox.has_area():
            add("bbox_area", [c.id], f"cell {c.id} bbox {c.bbox.as_list()} has non-positive area")
        elif tb.is_finite() and not tb.contains(c.bbox):
            add("bbox_outside", [c.id], f"cell {c.id} bbox lies outside the table bbox")
        if c.text == "" and not c.placeholder:
            add("empty_text", [c.id], f"cell {c.id} has empty text but is not a placeholder")

    cells = t.cells
    for i in range(len(cells)):
        a = cells[i]
        for j in range(i + 1, len(cells)):
            b = cells[j]
            if a.id == b.id:
                continue
            if _intervals_intersect(a.row_start, a.row_end, b.row_start, b.row_end) and _intervals_intersect(
                a.col_start, a.col_end, b.col_start, b.col_end
            ):
                lo, hi = sorted((a.id, b.id))
                add("overlap", [lo, hi], f"cells {lo} and {hi} have overlapping spans")

    if t.image is not None:
        img = np.asarray(t.image)
        if img.ndim != 2 or img.size == 0:
            add("image_shape", [], f"image must be a non-empty 2-D array, got shape {img.shape}")
        elif not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
            add("image_range", [], "image values must lie in [0, 1]")
    return ValidationReport(out)


def ground_truth_relation(a: Cell, b: Cell) -> tuple[bool, bool]:
    """(same_row, same_col) by span-interval intersection."""
    if a.id == b.id:
        raise TableError(f"relation of cell {a.id} with itself is undefined")
    same_row = _intervals_intersect(a.row_start, a.row_end, b.row_start, b.row_end)
    same_col = _intervals_intersect(a.col_start, a.col_end, b.col_start, b.col_end)
    return same_row, same_col
