"""On-disk dataset format: one JSON annotation + one 8-bit PGM per table.

Layout of a dataset directory::

    manifest.json
    tables/<id>.json
    images/<id>.pgm
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from gfte.table import BBox, Cell, TableInstance, ValidationReport, validate_table

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class IngestError(Exception):
    """Base class for dataset loading failures."""


class ParseError(IngestError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None, field: Optional[str] = None):
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.field = field


class TableValidationError(IngestError):
    def __init__(self, report: ValidationReport, path: Optional[str] = None):
        super().__init__(f"{path or 'table'} failed validation: {report}")
        self.report = report


class ConsistencyError(IngestError):
    """Image and annotation disagree (e.g. on pixel dimensions)."""


# -- PGM -------------------------------------------------------------------


def write_pgm(path, img: np.ndarray) -> None:
    """Write a [0,1] grayscale array as binary 8-bit PGM (P5)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected 2-D image, got shape {img.shape}")
    h, w = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ParseError("truncated PGM header")
        tokens.append(int(buf[i:j]))
        i = j
    # exactly one whitespace byte separates header and raster
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P5":
        raise ParseError("not a binary PGM (P5) file", path=str(path))
    try:
        (w, h, maxval), start = _pgm_tokens(buf[2:], 3)
    except ValueError as e:
        raise ParseError(f"bad PGM header: {e}", path=str(path)) from None
    start += 2
    if maxval != 255:
        raise ParseError(f"only 8-bit PGM supported (maxval {maxval})", path=str(path))
    raw = buf[start : start + w * h]
    if len(raw) != w * h:
        raise ParseError(f"PGM raster truncated: {len(raw)} of {w * h} bytes", path=str(path))
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def read_image(path) -> np.ndarray:
    """PGM natively; other formats (PNG, ...) through Pillow."""
    if str(path).lower().endswith(".pgm"):
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


# -- JSON schema ---------------------------------------------------------------


def table_to_dict(t: TableInstance) -> dict[str, Any]:
    d: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "source_id": t.source_id,
        "n_rows": t.n_rows,
        "n_cols": t.n_cols,
    }
    if t.unit is not None:
        d["unit"] = t.unit
    d["table_bbox"] = t.table_bbox.as_list()
    if t.image is not None:
        h, w = np.asarray(t.image).shape
        d["image_size"] = [w, h]
    cells = []
    for c in t.cells:
        cd = {
            "id": c.id,
            "text": c.text,
            "bbox": c.bbox.as_list(),
            "row": [c.row_start, c.row_end],
            "col": [c.col_start, c.col_end],
        }
        if c.placeholder:
            cd["placeholder"] = True
        cells.append(cd)
    d["cells"] = cells
    return d


def _need(d: dict, key: str, where: str, path):
    if not isinstance(d, dict) or key not in d:
        raise ParseError("missing required field", path=path, field=f"{where}{key}")
    return d[key]


def _bbox(v, fname: str, path) -> BBox:
    if not isinstance(v, (list, tuple)) or len(v) != 4:
        raise ParseError("bbox must be a list of 4 numbers", path=path, field=fname)
    try:
        vals = [float(x) for x in v]
    except (TypeError, ValueError):
        raise ParseError("bbox entries must be numbers", path=path, field=fname) from None
    return BBox(*vals)


def _pair(v, fname: str, path) -> tuple[int, int]:
    if not isinstance(v, (list, tuple)) or len(v) != 2 or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ParseError("expected [start, end] integer pair", path=path, field=fname)
    return int(v[0]), int(v[1])


def table_from_dict(d: dict[str, Any], image: Optional[np.ndarray], path=None) -> TableInstance:
    """Build a TableInstance without validating invariants."""
    if not isinstance(d, dict):
        raise ParseError("top-level JSON value must be an object", path=path)
    version = d.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version}", path=path, field="format_version")
    n_rows = _need(d, "n_rows", "", path)
    n_cols = _need(d, "n_cols", "", path)
    if not isinstance(n_rows, int) or not isinstance(n_cols, int):
        raise ParseError("grid dimensions must be integers", path=path, field="n_rows/n_cols")
    table_bbox = _bbox(_need(d, "table_bbox", "", path), "table_bbox", path)
    raw_cells = _need(d, "cells", "", path)
    if not isinstance(raw_cells, list):
        raise ParseError("cells must be a list", path=path, field="cells")
    cells = []
    for i, rc in enumerate(raw_cells):
        where = f"cells[{i}]."
        cid = _need(rc, "id", where, path)
        if not isinstance(cid, int) or isinstance(cid, bool):
            raise ParseError("cell id must be an integer", path=path, field=where + "id")
        text = rc.get("text", "")
        if not isinstance(text, str):
            raise ParseError("cell text must be a string", path=path, field=where + "text")
        bbox = _bbox(_need(rc, "bbox", where, path), where + "bbox", path)
        r0, r1 = _pair(_need(rc, "row", where, path), where + "row", path)
        c0, c1 = _pair(_need(rc, "col", where, path), where + "col", path)
        placeholder = bool(rc.get("placeholder", text == ""))
        cells.append(Cell(cid, text, bbox, r0, r1, c0, c1, placeholder))
    unit = d.get("unit")
    if unit is not None and not isinstance(unit, str):
        raise ParseError("unit must be a string", path=path, field="unit")
    size = d.get("image_size")
    if image is not None and size is not None:
        h, w = image.shape
        if list(size) != [w, h]:
            raise ConsistencyError(f"{path or 'table'}: annotation image_size {list(size)} != image {[w, h]}")
    return TableInstance(
        cells=tuple(cells),
        image=image,
        table_bbox=table_bbox,
        n_rows=n_rows,
        n_cols=n_cols,
        unit=unit,
        source_id=str(d.get("source_id", "")),
    )


def _read_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=str(path), line=e.lineno) from None


def read_table(json_path, image_path) -> TableInstance:
    """Parse annotation and image; invariants are not checked."""
    image = read_image(image_path)
    return table_from_dict(_read_json(json_path), image, path=str(json_path))


def load_table(json_path, image_path) -> TableInstance:
    t = read_table(json_path, image_path)
    report = validate_table(t)
    if not report.ok:
        raise TableValidationError(report, str(json_path))
    return t


def save_table(t: TableInstance, json_path, image_path) -> None:
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(table_to_dict(t), f, ensure_ascii=False, indent=1, sort_keys=False)
        f.write("\n")
    write_pgm(image_path, t.image)


# -- manifest --------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    table: str
    image: str


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)
    format_version: int = FORMAT_VERSION
    stats: dict[str, int] = field(default_factory=dict)

    def table_path(self, e: ManifestEntry) -> Path:
        return self.root / e.table

    def image_path(self, e: ManifestEntry) -> Path:
        return self.root / e.image

    def load(self, e: ManifestEntry) -> TableInstance:
        return load_table(self.table_path(e), self.image_path(e))

    def subset(self, entries: Iterable[ManifestEntry]) -> "DatasetManifest":
        entries = list(entries)
        return DatasetManifest(self.root, entries, self.format_version, recount(self.root, entries))


def table_stats(tables: Iterable[TableInstance]) -> dict[str, int]:
    n_tables = n_cells = n_merged = n_merged_tables = 0
    for t in tables:
        n_tables += 1
        n_cells += len(t.cells)
        m = t.n_merged
        n_merged += m
        n_merged_tables += m > 0
    return {"tables": n_tables, "cells": n_cells, "merged_cells": n_merged, "merged_tables": n_merged_tables}


def recount(root: Path, entries: list[ManifestEntry]) -> dict[str, int]:
    return table_stats(read_table(root / e.table, root / e.image) for e in entries)


def manifest_to_dict(m: DatasetManifest) -> dict[str, Any]:
    return {
        "format_version": m.format_version,
        "stats": m.stats,
        "entries": [{"id": e.id, "table": e.table, "image": e.image} for e in m.entries],
    }


def write_manifest(m: DatasetManifest, extra: Optional[dict] = None) -> Path:
    d = manifest_to_dict(m)
    if extra:
        d.update(extra)
    path = Path(m.root) / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(d, f, indent=1, sort_keys=True)
        f.write("\n")
    return path


def load_manifest(root, verify: bool = True) -> DatasetManifest:
    """Read ``root/manifest.json``; with ``verify`` check files exist and stats match."""
    root = Path(root)
    path = root / "manifest.json"
    d = _read_json(path)
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version}", path=str(path), field="format_version")
    entries = []
    for i, e in enumerate(_need(d, "entries", "", str(path))):
        entries.append(
            ManifestEntry(
                str(_need(e, "id", f"entries[{i}].", str(path))),
                _need(e, "table", f"entries[{i}].", str(path)),
                _need(e, "image", f"entries[{i}].", str(path)),
            )
        )
    m = DatasetManifest(root, entries, version, dict(d.get("stats", {})))
    if verify:
        missing = [p for e in entries for p in (root / e.table, root / e.image) if not p.exists()]
        if missing:
            raise IngestError(f"manifest references missing files: {', '.join(map(str, missing[:5]))}")
        actual = recount(root, entries)
        if m.stats and m.stats != actual:
            raise ConsistencyError(f"manifest stats {m.stats} disagree with recount {actual}")
    return m


def write_dataset(tables: list[TableInstance], out_dir, extra: Optional[dict] = None) -> DatasetManifest:
    out = Path(out_dir)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for t in tables:
        sid = t.source_id
        if not sid or os.sep in sid or sid in (".", ".."):
            raise ValueError(f"table source_id {sid!r} is not usable as a file name")
        e = ManifestEntry(sid, f"tables/{sid}.json", f"images/{sid}.pgm")
        save_table(t, out / e.table, out / e.image)
        entries.append(e)
    m = DatasetManifest(out, entries, FORMAT_VERSION, table_stats(tables))
    write_manifest(m, extra)
    return m


def load_dataset(m: DatasetManifest) -> list[TableInstance]:
    return [m.load(e) for e in m.entries]


# -- filtering -------------------------------------------------------------------


@dataclass(frozen=True)
class Rejection:
    entry: ManifestEntry
    reasons: tuple[str, ...]
    message: str


def rejection_reasons(t: TableInstance) -> tuple[list[str], str]:
    """Filter codes F1-F5 that reject ``t`` plus a human-readable message."""
    codes: list[str] = []
    msgs: list[str] = []
    report = validate_table(t)
    if not report.ok:
        codes.append("F1")
        msgs.append(str(report))
    if any(not (c.bbox.x1 > c.bbox.x0 and c.bbox.y1 > c.bbox.y0) for c in t.cells):
        codes.append("F2")
        msgs.append("cell bbox with non-positive area")
    ids = [c.id for c in t.cells]
    if len(ids) != len(set(ids)):
        codes.append("F3")
        msgs.append("duplicate cell ids")
    if len(t.cells) < 2:
        codes.append("F4")
        msgs.append(f"only {len(t.cells)} cell(s); no edges definable")
    if t.n_rows <= 0 or t.n_cols <= 0:
        codes.append("F5")
        msgs.append(f"grid dimension {t.n_rows}x{t.n_cols}")
    return codes, "; ".join(msgs)


def filter_dataset(m: DatasetManifest) -> tuple[DatasetManifest, list[Rejection]]:
    """Split a manifest into accepted entries and rejections with reasons."""
    accepted: list[ManifestEntry] = []
    accepted_tables: list[TableInstance] = []
    rejected: list[Rejection] = []
    for e in m.entries:
        try:
            t = read_table(m.table_path(e), m.image_path(e))
        except (OSError, IngestError, ValueError) as exc:
            rejected.append(Rejection(e, ("IO",), f"{type(exc).__name__}: {exc}"))
            continue
        codes, msg = rejection_reasons(t)
        if codes:
            log.info("rejecting %s: %s", e.id, msg)
            rejected.append(Rejection(e, tuple(codes), msg))
        else:
            accepted.append(e)
            accepted_tables.append(t)
    return DatasetManifest(m.root, accepted, m.format_version, table_stats(accepted_tables)), rejected
