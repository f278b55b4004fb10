"""Small hand-built tables used by tests, gradient checks and the CLI."""

from __future__ import annotations

import numpy as np

from gfte.ingest.synth import GenSpec, rasterize
from gfte.table import BBox, Cell, TableInstance

# (text, row_start, row_end, col_start, col_end)
PROFIT_MARGIN_CELLS = [
    ("Company Name", 0, 1, 0, 0),
    ("Gross Profit Margin(%)", 0, 0, 1, 3),
    ("Year 2017", 1, 1, 1, 1),
    ("Year 2016", 1, 1, 2, 2),
    ("Year 2015", 1, 1, 3, 3),
    ("Hubei Yihua", 2, 2, 0, 0),
    ("0.79", 2, 2, 1, 1),
    ("20.18", 2, 2, 2, 2),
    ("14.92", 2, 2, 3, 3),
    ("Hualu Hengsheng", 3, 3, 0, 0),
    ("22.22", 3, 3, 1, 1),
    ("20.78", 3, 3, 2, 2),
    ("16.45", 3, 3, 3, 3),
    ("Luxi Chemical", 4, 4, 0, 0),
    ("33.03", 4, 4, 1, 1),
    ("17.84", 4, 4, 2, 2),
    ("13.16", 4, 4, 3, 3),
]


def layout_table(
    cells: list[tuple[str, int, int, int, int]],
    n_rows: int,
    n_cols: int,
    col_widths: list[int] | None = None,
    row_height: int = 20,
    source_id: str = "sample",
    unit: str | None = None,
) -> TableInstance:
    """Place texts centred in a regular grid and rasterise with all rule lines."""
    widths = col_widths or [90] * n_cols
    xs = [0]
    for w in widths:
        xs.append(xs[-1] + w)
    ys = [r * row_height for r in range(n_rows + 1)]
    out = []
    for cid, (text, r0, r1, c0, c1) in enumerate(cells):
        tw = min(len(text) * 5 - 1, xs[c1 + 1] - xs[c0] - 4)
        x = (xs[c0] + xs[c1 + 1] - tw) // 2
        y = (ys[r0] + ys[r1 + 1] - 7) // 2
        out.append(Cell(cid, text, BBox(float(x), float(y), float(x + tw), float(y + 7)), r0, r1, c0, c1))
    W, H = xs[-1] + 1, ys[-1] + 1
    t = TableInstance(tuple(out), np.ones((H, W)), BBox(0.0, 0.0, float(W), float(H)), n_rows, n_cols, unit, source_id)
    img = rasterize(t, GenSpec(n_tables=1, merge_probability=0.0, dropped_line_probability=0.0))
    return TableInstance(t.cells, img, t.table_bbox, n_rows, n_cols, unit, source_id)


def profit_margin_table() -> TableInstance:
    """The five-row gross-profit-margin example with its two merged headers."""
    return layout_table(PROFIT_MARGIN_CELLS, 5, 4, [110, 70, 70, 70], source_id="profit_margin", unit="%")


def profit_margin_header() -> TableInstance:
    """First three rows (nine cells) of :func:`profit_margin_table`."""
    return layout_table(PROFIT_MARGIN_CELLS[:9], 3, 4, [110, 70, 70, 70], source_id="profit_margin_head", unit="%")


def four_cell_table() -> TableInstance:
    return layout_table(
        [("Item", 0, 0, 0, 0), ("Value", 0, 0, 1, 1), ("Cash", 1, 1, 0, 0), ("12.5", 1, 1, 1, 1)],
        2,
        2,
        [60, 50],
        source_id="four_cell",
    )
