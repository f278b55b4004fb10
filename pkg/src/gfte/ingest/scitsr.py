"""Adapter for SciTSR-style annotations.

Expected directory layout (one stem per table)::

    structure/<stem>.json   {"cells": [{"id", "content": [...], "start_row", "end_row",
                                        "start_col", "end_col"}, ...]}
    chunk/<stem>.chunk      {"chunks": [{"pos": [x1, x2, y1, y2], "text": "..."}, ...]}
    img/<stem>.png          optional table-region raster

Chunk coordinates are PDF-style (y grows upward); they are flipped to the
top-left convention. A cell's box is the union of the chunks whose text
makes up its content. Cells with no content are dropped.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Optional

import numpy as np

from gfte.ingest.io import IngestError, ParseError, read_image
from gfte.table import BBox, Cell, TableInstance

log = logging.getLogger(__name__)

MARGIN = 2.0
_WS = re.compile(r"\s+")


class ScitsrError(IngestError):
    pass


def _norm(s: str) -> str:
    return _WS.sub("", s)


def _load(path: Path, key: str):
    try:
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=str(path), line=e.lineno) from None
    if not isinstance(d, dict) or key not in d:
        raise ParseError("missing required field", path=str(path), field=key)
    return d[key]


def _match_chunks(cells: list[dict], chunks: list[dict], stem: str) -> dict[int, list[int]]:
    """Assign chunks to cells by text; each chunk is used at most once."""
    free = list(range(len(chunks)))
    texts = [_norm(str(ch.get("text", ""))) for ch in chunks]
    out: dict[int, list[int]] = {}
    for cell in cells:
        target = _norm("".join(cell.get("content", [])))
        if not target:
            continue
        picked: list[int] = []
        # exact single-chunk match first, then greedy concatenation in order
        exact = [i for i in free if texts[i] == target]
        if exact:
            picked = [exact[0]]
        else:
            rest = target
            for i in free:
                if texts[i] and rest.startswith(texts[i]):
                    picked.append(i)
                    rest = rest[len(texts[i]) :]
                    if not rest:
                        break
            if rest:
                raise ScitsrError(f"{stem}: no chunks spell the content of cell {cell.get('id')} ({target!r})")
        for i in picked:
            free.remove(i)
        out[int(cell["id"])] = picked
    return out


def load_scitsr_table(root, stem: str, image: bool = True) -> TableInstance:
    root = Path(root)
    spath = root / "structure" / f"{stem}.json"
    cpath = root / "chunk" / f"{stem}.chunk"
    cells = _load(spath, "cells")
    chunks = _load(cpath, "chunks")
    for i, ch in enumerate(chunks):
        pos = ch.get("pos")
        if not isinstance(pos, list) or len(pos) != 4:
            raise ParseError("chunk pos must be [x1, x2, y1, y2]", path=str(cpath), field=f"chunks[{i}].pos")
    for i, c in enumerate(cells):
        for key in ("id", "start_row", "end_row", "start_col", "end_col"):
            if key not in c:
                raise ParseError("missing required field", path=str(spath), field=f"cells[{i}].{key}")
    assignment = _match_chunks(cells, chunks, stem)
    if not assignment:
        raise ScitsrError(f"{stem}: no cell has content")

    used = [chunks[i]["pos"] for ids in assignment.values() for i in ids]
    xs0 = min(p[0] for p in used)
    xs1 = max(p[1] for p in used)
    ys0 = min(p[2] for p in used)
    ys1 = max(p[3] for p in used)
    top = ys1 + MARGIN
    table_bbox = BBox(0.0, 0.0, (xs1 - xs0) + 2 * MARGIN, (ys1 - ys0) + 2 * MARGIN)

    out_cells = []
    for c in cells:
        cid = int(c["id"])
        if cid not in assignment:
            continue
        boxes = [chunks[i]["pos"] for i in assignment[cid]]
        x0 = min(b[0] for b in boxes) - xs0 + MARGIN
        x1 = max(b[1] for b in boxes) - xs0 + MARGIN
        y0 = top - max(b[3] for b in boxes)
        y1 = top - min(b[2] for b in boxes)
        out_cells.append(
            Cell(
                cid,
                " ".join(c.get("content", [])),
                BBox(float(x0), float(y0), float(x1), float(y1)),
                int(c["start_row"]),
                int(c["end_row"]),
                int(c["start_col"]),
                int(c["end_col"]),
            )
        )
    n_rows = max(int(c["end_row"]) for c in cells) + 1
    n_cols = max(int(c["end_col"]) for c in cells) + 1

    img: Optional[np.ndarray] = None
    ipath = root / "img" / f"{stem}.png"
    if image and ipath.exists():
        img = read_image(ipath)
    if img is None:
        log.warning("%s: no image found, using a blank page", stem)
        img = np.ones((max(int(round(table_bbox.y1)), 2), max(int(round(table_bbox.x1)), 2)))
    return TableInstance(
        cells=tuple(sorted(out_cells, key=lambda c: c.id)),
        image=img,
        table_bbox=table_bbox,
        n_rows=n_rows,
        n_cols=n_cols,
        unit=None,
        source_id=stem,
    )


def scitsr_stems(root) -> list[str]:
    return sorted(p.stem for p in (Path(root) / "structure").glob("*.json"))


def load_scitsr_dir(root) -> tuple[list[TableInstance], list[tuple[str, str]]]:
    """Load every table under ``root``; unreadable ones are returned as (stem, reason)."""
    tables, failed = [], []
    for stem in scitsr_stems(root):
        try:
            tables.append(load_scitsr_table(root, stem))
        except (IngestError, OSError, ValueError) as e:
            failed.append((stem, f"{type(e).__name__}: {e}"))
    return tables, failed
