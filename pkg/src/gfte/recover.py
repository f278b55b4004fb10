"""Rebuild row/column spans from labeled same-row / same-column edges.

Per axis (rows shown; columns use label_v and x-centres):

1. A node is a span candidate when two of its same-row partners are
   explicitly labeled as *not* same-row (its neighbourhood is not a clique).
2. Union-find over same-row edges between non-candidates gives atomic rows.
3. Atomic rows are ordered by mean y-centre (ties: smallest cell id).
4. A candidate spans from the lowest to the highest atomic row among its
   non-candidate partners; one without such partners snaps to the nearest
   atomic row and is reported.
"""

from __future__ import annotations

import csv
import html
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from gfte.cellgraph import NodeGeometry
from gfte.table import EdgeSample, TableInstance


class UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}
        self.rank = {x: 0 for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def groups(self) -> list[list]:
        out: dict = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return [sorted(g) for g in out.values()]


@dataclass
class RecoveredStructure:
    spans: dict[int, tuple[int, int, int, int]]
    n_rows: int
    n_cols: int
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "cells": [
                {"id": cid, "row": [r0, r1], "col": [c0, c1]} for cid, (r0, r1, c0, c1) in sorted(self.spans.items())
            ],
            "diagnostics": self.diagnostics,
        }

    def grid(self) -> list[list[Optional[int]]]:
        g: list[list[Optional[int]]] = [[None] * self.n_cols for _ in range(self.n_rows)]
        for cid, (r0, r1, c0, c1) in sorted(self.spans.items()):
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    if g[r][c] is None:
                        g[r][c] = cid
        return g

    def to_csv(self, texts: Optional[dict[int, str]] = None) -> str:
        """Grid as CSV; a spanning cell's text fills its top-left slot only."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for r, row in enumerate(self.grid()):
            out = []
            for c, cid in enumerate(row):
                if cid is None or (self.spans[cid][0], self.spans[cid][2]) != (r, c):
                    out.append("")
                else:
                    out.append(texts.get(cid, "") if texts is not None else str(cid))
            w.writerow(out)
        return buf.getvalue()

    def to_html(self, texts: Optional[dict[int, str]] = None) -> str:
        lines = ["<table>"]
        grid = self.grid()
        for r, row in enumerate(grid):
            lines.append("  <tr>")
            for c, cid in enumerate(row):
                if cid is None:
                    lines.append("    <td></td>")
                    continue
                r0, r1, c0, c1 = self.spans[cid]
                if (r0, c0) != (r, c):
                    continue
                attrs = ""
                if r1 > r0:
                    attrs += f' rowspan="{r1 - r0 + 1}"'
                if c1 > c0:
                    attrs += f' colspan="{c1 - c0 + 1}"'
                label = texts.get(cid, "") if texts is not None else str(cid)
                lines.append(f"    <td{attrs}>{html.escape(label)}</td>")
            lines.append("  </tr>")
        lines.append("</table>")
        return "\n".join(lines) + "\n"


def _axis(ids: list[int], centre: dict[int, float], pos_edges: set, neg_edges: set):
    partners: dict[int, set[int]] = {i: set() for i in ids}
    for a, b in pos_edges:
        partners[a].add(b)
        partners[b].add(a)

    flagged = set()
    for x in ids:
        nb = sorted(partners[x])
        for i in range(len(nb)):
            for j in range(i + 1, len(nb)):
                if (nb[i], nb[j]) in neg_edges:
                    flagged.add(x)
                    break
            if x in flagged:
                break
    if len(flagged) == len(ids):
        # no atomic backbone left; fall back to treating every node as atomic
        flagged = set()

    atomic = [i for i in ids if i not in flagged]
    uf = UnionFind(atomic)
    for a, b in sorted(pos_edges):
        if a not in flagged and b not in flagged:
            uf.union(a, b)
    comps = uf.groups()
    keyed = sorted((sum(centre[i] for i in g) / len(g), g[0], g) for g in comps)
    index = {}
    means = []
    for k, (m, _, g) in enumerate(keyed):
        means.append(m)
        for i in g:
            index[i] = k

    spans: dict[int, tuple[int, int]] = {i: (index[i], index[i]) for i in atomic}
    unpartnered = []
    for x in sorted(flagged):
        ks = [index[p] for p in partners[x] if p in index]
        if ks:
            spans[x] = (min(ks), max(ks))
        else:
            k = min(range(len(means)), key=lambda k: (abs(means[k] - centre[x]), k))
            spans[x] = (k, k)
            unpartnered.append(x)
    return spans, len(keyed), sorted(flagged), unpartnered


def recover_structure(nodes: Sequence[NodeGeometry], edges: Sequence[EdgeSample]) -> RecoveredStructure:
    ids = sorted(n.cell_id for n in nodes)
    if not ids:
        raise ValueError("recover_structure needs at least one node")
    known = set(ids)
    cy = {n.cell_id: n.rel_cy for n in nodes}
    cx = {n.cell_id: n.rel_cx for n in nodes}
    pos_h, neg_h, pos_v, neg_v = set(), set(), set(), set()
    dangling = []
    for e in edges:
        if e.src not in known or e.dst not in known:
            dangling.append([e.src, e.dst])
            continue
        pair = (min(e.src, e.dst), max(e.src, e.dst))
        if e.label_h is not None:
            (pos_h if e.label_h else neg_h).add(pair)
        if e.label_v is not None:
            (pos_v if e.label_v else neg_v).add(pair)

    rows, n_rows, flag_r, unp_r = _axis(ids, cy, pos_h, neg_h)
    cols, n_cols, flag_c, unp_c = _axis(ids, cx, pos_v, neg_v)
    spans = {i: (rows[i][0], rows[i][1], cols[i][0], cols[i][1]) for i in ids}

    conflicts = []
    for i, a in enumerate(ids):
        ra = spans[a]
        for b in ids[i + 1 :]:
            rb = spans[b]
            if ra[0] <= rb[1] and rb[0] <= ra[1] and ra[2] <= rb[3] and rb[2] <= ra[3]:
                conflicts.append([a, b])
    diagnostics = {
        "row_span_candidates": flag_r,
        "col_span_candidates": flag_c,
        "unassigned_rows": unp_r,
        "unassigned_cols": unp_c,
        "conflicts": conflicts,
        "dangling_edges": dangling,
    }
    return RecoveredStructure(spans, n_rows, n_cols, diagnostics)


@dataclass(frozen=True)
class StructureScore:
    exact: bool
    agreement: float
    n_cells: int


def compare_structures(a: RecoveredStructure, b: TableInstance) -> StructureScore:
    truth = {c.id: (c.row_start, c.row_end, c.col_start, c.col_end) for c in b.cells}
    if set(truth) != set(a.spans):
        missing = sorted(set(truth) ^ set(a.spans))
        raise ValueError(f"cell id sets differ: {missing[:10]}")
    same = sum(a.spans[i] == truth[i] for i in truth)
    n = len(truth)
    return StructureScore(same == n, same / n if n else 1.0, n)


def dumps(s: RecoveredStructure) -> str:
    return json.dumps(s.to_json(), indent=1)
