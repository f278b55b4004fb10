from pathlib import Path

import numpy as np
import pytest

from gfte.ingest.synth import GenSpec, generate_tables
from gfte.table import BBox, Cell, TableInstance

FIXTURES = Path(__file__).parent / "fixtures"


def make_table(spans, n_rows, n_cols, cell_w=40.0, cell_h=20.0, texts=None, source_id="hand"):
    """Grid table from (row_start, row_end, col_start, col_end) spans with boxes inset in their slots."""
    cells = []
    for i, (r0, r1, c0, c1) in enumerate(spans):
        box = BBox(c0 * cell_w + 3, r0 * cell_h + 3, (c1 + 1) * cell_w - 3, (r1 + 1) * cell_h - 3)
        text = texts[i] if texts else f"c{i}"
        cells.append(Cell(i, text, box, r0, r1, c0, c1))
    W, H = n_cols * cell_w, n_rows * cell_h
    return TableInstance(cells, np.ones((int(H), int(W))), BBox(0, 0, W, H), n_rows, n_cols, source_id=source_id)


@pytest.fixture(scope="session")
def synth_tables():
    return generate_tables(GenSpec(n_tables=40, seed=11))


@pytest.fixture(scope="session")
def scitsr_root():
    return FIXTURES / "scitsr"


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
