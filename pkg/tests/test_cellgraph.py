import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_table
from gfte.cellgraph import (
    GraphError,
    NodeGeometry,
    build_graph,
    complete_graph,
    knn_graph,
    label_edges,
    relative_positions,
)
from gfte.ingest.synth import GenSpec, generate_tables
from gfte.samples import profit_margin_header
from gfte.table import BBox, Cell, EdgeSample, TableInstance, ground_truth_relation


def node(i, x, y):
    return NodeGeometry(i, x, y, 0.01, 0.01, x - 0.005, y - 0.005, x + 0.005, y + 0.005)


def test_relative_positions_full_cell():
    c = Cell(0, "a", BBox(0, 0, 200, 100), 0, 0, 0, 0)
    t = TableInstance([c], np.ones((100, 200)), BBox(0, 0, 200, 100), 1, 1)
    (n,) = relative_positions(t)
    assert (n.rel_left, n.rel_top, n.rel_right, n.rel_bottom, n.rel_cx, n.rel_cy) == (0, 0, 1, 1, 0.5, 0.5)


def test_relative_positions_centre_block():
    c = Cell(0, "a", BBox(50, 25, 150, 75), 0, 0, 0, 0)
    t = TableInstance([c], np.ones((100, 200)), BBox(0, 0, 200, 100), 1, 1)
    (n,) = relative_positions(t)
    assert (n.rel_cx, n.rel_cy, n.rel_w, n.rel_h) == (0.5, 0.5, 0.5, 0.5)


def shifted(t, dx, dy, s=1.0):
    cells = [Cell(c.id, c.text, c.bbox.scaled(s).translated(dx, dy), *c.rows, *c.cols) for c in t.cells]
    return TableInstance(cells, t.image, t.table_bbox.scaled(s).translated(dx, dy), t.n_rows, t.n_cols)


def test_translation_and_scaling_invariance(synth_tables):
    t = synth_tables[0]
    base = relative_positions(t)
    moved = relative_positions(shifted(t, 17.0, -4.0))
    assert all(np.allclose(a.pos_vector(), b.pos_vector()) for a, b in zip(base, moved))
    assert knn_graph(base, 4).edge_pairs() == knn_graph(relative_positions(shifted(t, 0, 0, 2.5)), 4).edge_pairs()


def test_node_geometry_ranges(synth_tables):
    for t in synth_tables:
        for n in relative_positions(t):
            v = n.pos_vector()
            assert all(0.0 <= x <= 1.0 for x in v)
            assert n.rel_left <= n.rel_cx <= n.rel_right and n.rel_top <= n.rel_cy <= n.rel_bottom


def test_knn_collinear_tie_goes_to_lower_id():
    g = knn_graph([node(0, 0.1, 0.5), node(1, 0.5, 0.5), node(2, 0.9, 0.5)], k=1)
    assert g.edge_pairs() == {(0, 1), (1, 2)}


def test_knn_k_n_minus_one_is_complete(synth_tables):
    t = synth_tables[3]
    nodes = relative_positions(t)
    assert knn_graph(nodes, len(nodes) - 1).edge_pairs() == complete_graph(t).edge_pairs()


def test_knn_nine_nodes_k3():
    t = profit_margin_header()
    nodes = relative_positions(t)
    assert len(nodes) == 9
    g = knn_graph(nodes, 3)
    assert len(g.edges) <= 27
    pts = {n.cell_id: np.array([n.rel_cx, n.rel_cy]) for n in nodes}
    for a in pts:
        ranked = sorted((np.sum((pts[a] - pts[b]) ** 2), b) for b in pts if b != a)
        for _, b in ranked[:3]:
            assert (min(a, b), max(a, b)) in g.edge_pairs()


def test_knn_errors():
    with pytest.raises(GraphError):
        knn_graph([node(0, 0.5, 0.5)], 3)
    with pytest.raises(GraphError):
        knn_graph([node(0, 0.1, 0.1), node(1, 0.2, 0.2)], 0)


def test_complete_graph_sizes():
    assert len(complete_graph(make_table([(0, 0, 0, 0), (0, 0, 1, 1)], 1, 2)).edges) == 1
    assert len(complete_graph(profit_margin_header()).edges) == 36
    with pytest.raises(GraphError):
        complete_graph(make_table([(0, 0, 0, 0)], 1, 1))


def test_profit_margin_labels():
    t = profit_margin_header()
    g = label_edges(complete_graph(t), t)
    ids = {c.text: c.id for c in t.cells}
    lab = {(e.src, e.dst): e for e in g.edges}
    hy = ids["Hubei Yihua"]
    e = lab[tuple(sorted((hy, ids["0.79"])))]
    assert e.label_h and not e.label_v
    e = lab[tuple(sorted((hy, ids["Company Name"])))]
    assert e.label_v and not e.label_h


def test_label_edges_rejects_foreign_edge(synth_tables):
    t = synth_tables[0]
    g = complete_graph(t)
    bad = g.__class__(g.nodes, g.edges + (EdgeSample(0, 10_000),), g.k)
    with pytest.raises(GraphError):
        label_edges(bad, t)


def test_unlabeled_graph_has_no_labels(synth_tables):
    g = build_graph(synth_tables[0], labeled=False)
    with pytest.raises(GraphError):
        g.labels("h")


def test_graph_json_dump(tmp_path, synth_tables):
    g = build_graph(synth_tables[1], 4)
    g.dump(tmp_path / "g.json")
    d = json.loads((tmp_path / "g.json").read_text())
    assert len(d["edges"]) == len(g.edges) and d["k"] == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**40), st.integers(1, 8))
def test_knn_properties_on_generated_tables(seed, k):
    for t in generate_tables(GenSpec(n_tables=3, seed=seed)):
        g = build_graph(t, k)
        full = complete_graph(t).edge_pairs()
        assert g.edge_pairs() <= full
        assert len(g.edges) <= k * len(g.nodes)
        assert all(e.src < e.dst for e in g.edges)
        by_id = t.cells_by_id()
        for e in g.edges:
            assert (e.label_h, e.label_v) == ground_truth_relation(by_id[e.src], by_id[e.dst])
            assert not (e.label_h and e.label_v)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0, 1, allow_nan=False), st.floats(0, 1, allow_nan=False)), min_size=2, max_size=12
    ),
    st.integers(1, 12),
)
def test_knn_matches_brute_force(points, k):
    nodes = [node(i, x, y) for i, (x, y) in enumerate(points)]
    expected = set()
    for i, (x, y) in enumerate(points):
        ranked = sorted(((x - a) ** 2 + (y - b) ** 2, j) for j, (a, b) in enumerate(points) if j != i)
        for _, j in ranked[:k]:
            expected.add((min(i, j), max(i, j)))
    assert knn_graph(nodes, k).edge_pairs() == expected


def test_edge_index_is_positional(synth_tables):
    g = build_graph(synth_tables[2], 3)
    pos = g.edge_index()
    ids = g.node_ids
    assert [(ids[a], ids[b]) for a, b in pos] == [(e.src, e.dst) for e in g.edges]
