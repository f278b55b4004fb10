"""Synthetic ruled/semi-ruled tables with merged cells and pseudo-glyph rasters."""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from gfte.rng import Xoshiro256
from gfte.table import BBox, Cell, TableInstance

GLYPH_W = 4
GLYPH_H = 7
ADVANCE = GLYPH_W + 1
PAD_X = 4
INK_LINE = 0.0
INK_TEXT = 64 / 255
ALIGNMENTS = ("left", "right", "center")
TEXT_MODES = ("financial", "column_informative", "random")

DEFAULT_ALPHABET = string.digits + string.ascii_letters + " .,%-"


class GenSpecError(ValueError):
    """Degenerate or inconsistent generator configuration."""


@dataclass(frozen=True)
class GenSpec:
    n_tables: int = 100
    rows_range: tuple[int, int] = (3, 10)
    cols_range: tuple[int, int] = (2, 6)
    merge_probability: float = 0.35
    dropped_line_probability: float = 0.085
    alignment_mix: dict = field(default_factory=lambda: {"left": 0.1, "right": 0.6, "center": 0.3})
    seed: int = 0
    text_alphabet: str = DEFAULT_ALPHABET
    text_mode: str = "financial"

    def __post_init__(self):
        object.__setattr__(self, "rows_range", tuple(self.rows_range))
        object.__setattr__(self, "cols_range", tuple(self.cols_range))
        self.check()

    def check(self) -> None:
        if not isinstance(self.n_tables, int) or self.n_tables < 1:
            raise GenSpecError(f"n_tables must be a positive integer, got {self.n_tables!r}")
        for name in ("rows_range", "cols_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise GenSpecError(f"{name} {lo}..{hi} is empty or non-positive")
        for name in ("merge_probability", "dropped_line_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise GenSpecError(f"{name} must lie in [0, 1], got {p}")
        if set(self.alignment_mix) - set(ALIGNMENTS):
            raise GenSpecError(f"unknown alignment(s) {sorted(set(self.alignment_mix) - set(ALIGNMENTS))}")
        if any(w < 0 for w in self.alignment_mix.values()) or sum(self.alignment_mix.values()) <= 0:
            raise GenSpecError("alignment_mix weights must be non-negative with a positive sum")
        if not self.text_alphabet.strip():
            raise GenSpecError("text_alphabet must contain at least one printable non-space character")
        if self.text_mode not in TEXT_MODES:
            raise GenSpecError(f"text_mode must be one of {TEXT_MODES}, got {self.text_mode!r}")
        if self.merge_probability > 0 and not self._feasible_dims():
            raise GenSpecError("merge_probability > 0 but no grid size in range admits a merge")

    def _feasible_dims(self) -> list[tuple[int, int]]:
        return [
            (r, c)
            for r in range(self.rows_range[0], self.rows_range[1] + 1)
            for c in range(self.cols_range[0], self.cols_range[1] + 1)
            if _merge_feasible(r, c)
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rows_range"] = list(self.rows_range)
        d["cols_range"] = list(self.cols_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise GenSpecError(f"unknown GenSpec key(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "GenSpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _merge_feasible(n_rows: int, n_cols: int) -> bool:
    # a 1x2 merge needs a third column and a second row; 2x1 symmetric
    return (n_cols >= 3 and n_rows >= 2) or (n_rows >= 3 and n_cols >= 2)


# -- grid topology ---------------------------------------------------------------


def _unit_cover_ok(rects: list[list[int]], n_rows: int, n_cols: int) -> bool:
    row_ok = [False] * n_rows
    col_ok = [False] * n_cols
    for r0, r1, c0, c1 in rects:
        if r0 == r1 and c0 == c1:
            row_ok[r0] = True
            col_ok[c0] = True
    return all(row_ok) and all(col_ok)


def _try_merge(occ, rects, r0, r1, c0, c1, n_rows, n_cols) -> bool:
    if r1 >= n_rows or c1 >= n_cols or (r0 == r1 and c0 == c1):
        return False
    members = set()
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            k = occ[r][c]
            a = rects[k]
            if not (a[0] == a[1] and a[2] == a[3]):
                return False
            members.add(k)
    trial = [rc for k, rc in enumerate(rects) if k not in members and rc is not None] + [[r0, r1, c0, c1]]
    if not _unit_cover_ok(trial, n_rows, n_cols):
        return False
    keep = min(members)
    for k in members:
        rects[k] = None
    rects[keep] = [r0, r1, c0, c1]
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            occ[r][c] = keep
    return True


def _apply_merges(rng: Xoshiro256, n_rows: int, n_cols: int) -> list[list[int]]:
    occ = [[r * n_cols + c for c in range(n_cols)] for r in range(n_rows)]
    rects: list = [[r, r, c, c] for r in range(n_rows) for c in range(n_cols)]
    wanted = rng.randint(1, 3)
    done = 0
    for _ in range(40):
        if done >= wanted:
            break
        kind = rng.randint(0, 2)
        if kind == 0:
            # multi-column header
            w = rng.randint(2, 3)
            c0 = rng.randint(1 if n_cols > 2 else 0, n_cols - 1)
            ok = _try_merge(occ, rects, 0, 0, c0, c0 + w - 1, n_rows, n_cols)
        elif kind == 1:
            # multi-row label in the first column
            h = 2
            r0 = rng.randint(0, n_rows - 1)
            ok = _try_merge(occ, rects, r0, r0 + h - 1, 0, 0, n_rows, n_cols)
        else:
            h = rng.randint(1, 2)
            w = rng.randint(1, 3)
            r0 = rng.randint(0, n_rows - 1)
            c0 = rng.randint(0, n_cols - 1)
            ok = _try_merge(occ, rects, r0, r0 + h - 1, c0, c0 + w - 1, n_rows, n_cols)
        done += ok
    if done == 0:
        # deterministic fallback: every feasible domino, pick one
        options = []
        for r in range(n_rows):
            for c in range(n_cols):
                options.append((r, r, c, c + 1))
                options.append((r, r + 1, c, c))
        order = list(range(len(options)))
        rng.shuffle(order)
        for k in order:
            if _try_merge(occ, rects, *options[k], n_rows, n_cols):
                break
        else:  # pragma: no cover - unreachable for feasible dims
            raise GenSpecError(f"could not place a merge in a {n_rows}x{n_cols} grid")
    return [rc for rc in rects if rc is not None]


# -- text ------------------------------------------------------------------------


class _TextSource:
    def __init__(self, spec: GenSpec, rng: Xoshiro256, n_cols: int):
        alpha = [ch for ch in dict.fromkeys(spec.text_alphabet)]
        printable = [ch for ch in alpha if not ch.isspace()]
        self.letters = [ch for ch in printable if ch.isalpha()] or printable
        self.digits = [ch for ch in printable if ch.isdigit()] or printable
        self.has_space = " " in alpha
        self.dot = "." if "." in alpha else None
        self.pct = "%" if "%" in alpha else None
        self.printable = printable
        self.mode = spec.text_mode
        self.rng = rng
        # per-column signatures for the column-informative mode
        sig = []
        pool = list(self.letters)
        for j in range(n_cols):
            sig.append(pool[j % len(pool)])
        self.signatures = sig

    def _word(self, lo: int, hi: int) -> str:
        n = self.rng.randint(lo, hi)
        return "".join(self.rng.choice(self.letters) for _ in range(n))

    def _number(self) -> str:
        whole = "".join(self.rng.choice(self.digits) for _ in range(self.rng.randint(1, 5)))
        if self.dot and self.rng.bernoulli(0.8):
            whole += self.dot + "".join(self.rng.choice(self.digits) for _ in range(2))
        return whole

    def text(self, r0: int, c0: int, merged: bool) -> str:
        rng = self.rng
        if self.mode == "random":
            return "".join(rng.choice(self.printable) for _ in range(rng.randint(1, 10)))
        if self.mode == "column_informative":
            sig = self.signatures[c0]
            if r0 == 0:
                return sig * rng.randint(2, 4)
            body = self._number() if c0 > 0 else self._word(3, 9)
            return sig + body
        # financial
        if r0 == 0 or (merged and c0 > 0):
            return self._word(3, 8)
        if c0 == 0:
            s = self._word(4, 9)
            if self.has_space and rng.bernoulli(0.5):
                s += " " + self._word(2, 6)
            return s
        s = self._number()
        if self.pct and rng.bernoulli(0.1):
            s += self.pct
        return s


def text_width(s: str) -> int:
    return max(len(s) * ADVANCE - 1, 1)


# -- generation ------------------------------------------------------------------


def _make_table(spec: GenSpec, index: int) -> TableInstance:
    rng = Xoshiro256.named(spec.seed, f"gen/{index}")
    merged = spec.merge_probability > 0 and rng.bernoulli(spec.merge_probability)
    feasible = spec._feasible_dims() if merged else None
    if merged:
        n_rows, n_cols = feasible[rng.randint(0, len(feasible) - 1)]
    else:
        n_rows = rng.randint(*spec.rows_range)
        n_cols = rng.randint(*spec.cols_range)

    mix_names = [a for a in ALIGNMENTS if spec.alignment_mix.get(a, 0) > 0]
    mix_weights = [spec.alignment_mix[a] for a in mix_names]
    align = ["left"] + [rng.weighted_choice(mix_names, mix_weights) for _ in range(n_cols - 1)]

    rects = _apply_merges(rng, n_rows, n_cols) if merged else [[r, r, c, c] for r in range(n_rows) for c in range(n_cols)]
    rects.sort(key=lambda rc: (rc[0], rc[2]))

    src = _TextSource(spec, rng, n_cols)
    texts = [src.text(r0, c0, r0 != r1 or c0 != c1) for r0, r1, c0, c1 in rects]

    widths = [0] * n_cols
    for (r0, r1, c0, c1), s in zip(rects, texts):
        if c0 == c1:
            widths[c0] = max(widths[c0], text_width(s) + 2 * PAD_X)
    widths = [max(w, 12) for w in widths]
    pad_y = rng.randint(3, 5)
    row_h = GLYPH_H + 2 * pad_y

    xs = [0]
    for w in widths:
        xs.append(xs[-1] + w)
    ys = [r * row_h for r in range(n_rows + 1)]
    W, H = xs[-1] + 1, ys[-1] + 1

    cells = []
    for cid, ((r0, r1, c0, c1), s) in enumerate(zip(rects, texts)):
        left, right = xs[c0], xs[c1 + 1]
        avail = right - left - 2 * PAD_X
        max_chars = max((avail + 1) // ADVANCE, 1)
        s = s[:max_chars].rstrip() or s[:1]
        tw = text_width(s)
        a = align[c0] if c0 == c1 else "center"
        if a == "left":
            x = left + PAD_X
        elif a == "right":
            x = right - PAD_X - tw
        else:
            x = (left + right - tw) // 2
        y = (ys[r0] + ys[r1 + 1] - GLYPH_H) // 2
        bbox = BBox(float(x), float(y), float(x + tw), float(y + GLYPH_H))
        cells.append(Cell(cid, s, bbox, r0, r1, c0, c1))

    t = TableInstance(
        cells=tuple(cells),
        image=np.ones((H, W)),
        table_bbox=BBox(0.0, 0.0, float(W), float(H)),
        n_rows=n_rows,
        n_cols=n_cols,
        unit=None,
        source_id=f"t{index:05d}",
    )
    return TableInstance(t.cells, rasterize(t, spec), t.table_bbox, n_rows, n_cols, t.unit, t.source_id)


def generate_tables(spec: GenSpec, start: int = 0, count: Optional[int] = None) -> list[TableInstance]:
    """Tables ``start .. start+count`` of the corpus defined by ``spec``.

    Each table draws from its own named PRNG stream, so any slice of the
    corpus can be produced independently.
    """
    spec.check()
    n = spec.n_tables if count is None else count
    return [_make_table(spec, i) for i in range(start, start + n)]


# -- rasterisation -------------------------------------------------------------------


def grid_boundaries(t: TableInstance) -> tuple[list[float], list[float]]:
    """Row and column boundary coordinates derived from cell boxes.

    Interior boundaries sit midway between the content that ends on one side
    and the content that starts on the other; outer ones are the table bbox.
    """
    tb = t.table_bbox
    ys = [tb.y0]
    for i in range(1, t.n_rows):
        above = [c.bbox.y1 for c in t.cells if c.row_end == i - 1]
        below = [c.bbox.y0 for c in t.cells if c.row_start == i]
        ys.append((max(above) + min(below)) / 2.0 if above and below else tb.y0 + (tb.y1 - tb.y0) * i / t.n_rows)
    ys.append(tb.y1)
    xs = [tb.x0]
    for j in range(1, t.n_cols):
        left = [c.bbox.x1 for c in t.cells if c.col_end == j - 1]
        right = [c.bbox.x0 for c in t.cells if c.col_start == j]
        xs.append((max(left) + min(right)) / 2.0 if left and right else tb.x0 + (tb.x1 - tb.x0) * j / t.n_cols)
    xs.append(tb.x1)
    return ys, xs


def rasterize(t: TableInstance, spec: GenSpec) -> np.ndarray:
    """Draw rule lines and pseudo-glyph text of ``t`` into a [0,1] image.

    The image grid is the table bbox at one pixel per coordinate unit. Each
    interior boundary line is dropped independently with
    ``spec.dropped_line_probability``; the outer border is always drawn.
    """
    tb = t.table_bbox
    W = int(round(tb.x1 - tb.x0))
    H = int(round(tb.y1 - tb.y0))
    if W <= 0 or H <= 0:
        raise ValueError(f"table bbox {tb.as_list()} has zero area")
    rng = Xoshiro256.named(spec.seed, f"raster/{t.source_id}")
    img = np.ones((H, W))

    ys, xs = grid_boundaries(t)
    py = [min(max(int(round(y - tb.y0)), 0), H - 1) for y in ys]
    px = [min(max(int(round(x - tb.x0)), 0), W - 1) for x in xs]

    occ = [[-1] * t.n_cols for _ in range(t.n_rows)]
    for c in t.cells:
        for r in range(max(c.row_start, 0), min(c.row_end, t.n_rows - 1) + 1):
            for k in range(max(c.col_start, 0), min(c.col_end, t.n_cols - 1) + 1):
                occ[r][k] = c.id

    # border
    img[py[0], :] = INK_LINE
    img[py[-1], :] = INK_LINE
    img[:, px[0]] = INK_LINE
    img[:, px[-1]] = INK_LINE

    for i in range(1, t.n_rows):
        if rng.bernoulli(spec.dropped_line_probability):
            continue
        for k in range(t.n_cols):
            if occ[i - 1][k] != occ[i][k] or occ[i][k] < 0:
                img[py[i], px[k] : px[k + 1] + 1] = INK_LINE
    for j in range(1, t.n_cols):
        if rng.bernoulli(spec.dropped_line_probability):
            continue
        for r in range(t.n_rows):
            if occ[r][j - 1] != occ[r][j] or occ[r][j] < 0:
                img[py[r] : py[r + 1] + 1, px[j]] = INK_LINE

    for c in t.cells:
        draw_text(img, c, tb)
    return img


def draw_text(img: np.ndarray, c: Cell, tb: BBox) -> None:
    """Render each non-space character as a GLYPH_W x GLYPH_H dark block."""
    H, W = img.shape
    x0 = int(round(c.bbox.x0 - tb.x0))
    y0 = int(round(c.bbox.y0 - tb.y0))
    y1 = min(int(round(c.bbox.y1 - tb.y0)), H)
    x1 = int(round(c.bbox.x1 - tb.x0))
    if not c.text:
        return
    adv = max((x1 - x0 + 1) / len(c.text), 1.0)
    gw = max(int(round(adv)) - 1, 1)
    for k, ch in enumerate(c.text):
        if ch.isspace():
            continue
        gx = x0 + int(round(k * adv))
        img[max(y0, 0) : y1, max(gx, 0) : min(gx + gw, W)] = INK_TEXT
