"""Relative node geometry, KNN candidate edges and ground-truth edge labels."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from gfte.table import EdgeSample, TableError, TableInstance, ground_truth_relation

DEFAULT_K = 6


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class NodeGeometry:
    cell_id: int
    rel_cx: float
    rel_cy: float
    rel_w: float
    rel_h: float
    rel_left: float
    rel_top: float
    rel_right: float
    rel_bottom: float

    def pos_vector(self) -> list[float]:
        return [
            self.rel_left,
            self.rel_top,
            self.rel_right,
            self.rel_bottom,
            self.rel_cx,
            self.rel_cy,
            self.rel_w,
            self.rel_h,
        ]


@dataclass(frozen=True)
class CellGraph:
    nodes: tuple[NodeGeometry, ...]
    edges: tuple[EdgeSample, ...]
    k: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def node_ids(self) -> list[int]:
        return [n.cell_id for n in self.nodes]

    def index_of(self) -> dict[int, int]:
        return {n.cell_id: i for i, n in enumerate(self.nodes)}

    def edge_pairs(self) -> set[tuple[int, int]]:
        return {(e.src, e.dst) for e in self.edges}

    def edge_index(self) -> np.ndarray:
        """(m, 2) array of node positions (not cell ids) for each edge."""
        idx = self.index_of()
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array([[idx[e.src], idx[e.dst]] for e in self.edges], dtype=np.int64)

    def labels(self, direction: str) -> np.ndarray:
        attr = "label_h" if direction == "h" else "label_v"
        vals = [getattr(e, attr) for e in self.edges]
        if any(v is None for v in vals):
            raise GraphError("graph has unlabeled edges")
        return np.array(vals, dtype=bool)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "nodes": [vars(n) for n in self.nodes],
            "edges": [
                {"src": e.src, "dst": e.dst, "label_h": e.label_h, "label_v": e.label_v} for e in self.edges
            ],
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=1)


def relative_positions(t: TableInstance) -> list[NodeGeometry]:
    """Cell boxes normalised to the table bbox, one node per cell by ascending id."""
    tb = t.table_bbox
    w = tb.x1 - tb.x0
    h = tb.y1 - tb.y0
    out = []
    for c in sorted(t.cells, key=lambda c: c.id):
        left = (c.bbox.x0 - tb.x0) / w
        right = (c.bbox.x1 - tb.x0) / w
        top = (c.bbox.y0 - tb.y0) / h
        bottom = (c.bbox.y1 - tb.y0) / h
        out.append(
            NodeGeometry(
                cell_id=c.id,
                rel_cx=(left + right) / 2.0,
                rel_cy=(top + bottom) / 2.0,
                rel_w=right - left,
                rel_h=bottom - top,
                rel_left=left,
                rel_top=top,
                rel_right=right,
                rel_bottom=bottom,
            )
        )
    return out


def knn_graph(nodes: list[NodeGeometry], k: int = DEFAULT_K) -> CellGraph:
    """Union of each node's ``k`` nearest other nodes (Euclidean on centres).

    Distance ties go to the lower cell id.
    """
    n = len(nodes)
    if n < 2:
        raise GraphError(f"need at least 2 nodes to build a graph, got {n}")
    if k < 1:
        raise GraphError(f"k must be positive, got {k}")
    ids = np.array([nd.cell_id for nd in nodes])
    if len(set(ids.tolist())) != n:
        raise GraphError("duplicate cell ids among nodes")
    pts = np.array([[nd.rel_cx, nd.rel_cy] for nd in nodes], dtype=np.float64)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    kk = min(k, n - 1)
    pairs = set()
    for i in range(n):
        others = [j for j in range(n) if j != i]
        # lexsort: last key is primary
        order = np.lexsort((ids[others], d2[i, others]))
        for o in order[:kk]:
            j = others[o]
            a, b = int(ids[i]), int(ids[j])
            pairs.add((a, b) if a < b else (b, a))
    edges = tuple(EdgeSample(a, b) for a, b in sorted(pairs))
    return CellGraph(tuple(nodes), edges, k)


def complete_graph(t: TableInstance) -> CellGraph:
    nodes = relative_positions(t)
    if len(nodes) < 2:
        raise GraphError(f"need at least 2 cells, got {len(nodes)}")
    ids = sorted(nd.cell_id for nd in nodes)
    edges = tuple(EdgeSample(ids[i], ids[j]) for i in range(len(ids)) for j in range(i + 1, len(ids)))
    return CellGraph(tuple(nodes), edges, len(nodes) - 1)


def label_edges(g: CellGraph, t: TableInstance) -> CellGraph:
    by_id = t.cells_by_id()
    out = []
    for e in g.edges:
        if e.src not in by_id or e.dst not in by_id:
            raise GraphError(f"edge ({e.src}, {e.dst}) references a cell missing from table {t.source_id!r}")
        try:
            h, v = ground_truth_relation(by_id[e.src], by_id[e.dst])
        except TableError as exc:
            raise GraphError(str(exc)) from None
        out.append(e.with_labels(h, v))
    return replace(g, edges=tuple(out))


def build_graph(t: TableInstance, k: int = DEFAULT_K, labeled: bool = True) -> CellGraph:
    g = knn_graph(relative_positions(t), k)
    return label_edges(g, t) if labeled else g
