import json
import shutil

import pytest

from gfte.cellgraph import build_graph
from gfte.ingest.io import ParseError
from gfte.ingest.scitsr import ScitsrError, load_scitsr_dir, load_scitsr_table, scitsr_stems
from gfte.table import validate_table


def test_fixture_loads_and_validates(scitsr_root):
    tables, failed = load_scitsr_dir(scitsr_root)
    assert failed == [] and len(tables) == 3
    for t in tables:
        assert validate_table(t).ok, t.source_id
        assert t.image.shape == (round(t.table_bbox.height), round(t.table_bbox.width))


def test_spans_and_texts(scitsr_root):
    t = load_scitsr_table(scitsr_root, "1802.00002v2.3")
    by_text = {c.text: c for c in t.cells}
    assert by_text["Dataset"].rows == (0, 1)
    assert by_text["Accuracy"].cols == (1, 2)
    assert (t.n_rows, t.n_cols) == (4, 3)


def test_y_axis_is_flipped(scitsr_root):
    t = load_scitsr_table(scitsr_root, "1801.00001v1.1")
    by_text = {c.text: c for c in t.cells}
    # the header has the largest PDF y, so it ends up on top
    assert by_text["Method"].bbox.y0 < by_text["Ours"].bbox.y0 < by_text["Baseline"].bbox.y0


def test_multi_chunk_cell_and_empty_cell(scitsr_root):
    t = load_scitsr_table(scitsr_root, "1803.00003v1.2")
    texts = {c.id: c.text for c in t.cells}
    assert texts[1] == "Output size" and texts[3] == "128 x 128"
    assert 5 not in texts  # the empty cell is dropped
    assert len(build_graph(t).edges) > 0


def test_missing_image_falls_back_to_blank(scitsr_root, tmp_path):
    root = tmp_path / "s"
    shutil.copytree(scitsr_root, root)
    (root / "img" / "1801.00001v1.1.png").unlink()
    t = load_scitsr_table(root, "1801.00001v1.1")
    assert (t.image == 1.0).all() and validate_table(t).ok


def test_unmatched_content_reported(scitsr_root, tmp_path):
    root = tmp_path / "s"
    shutil.copytree(scitsr_root, root)
    p = root / "structure" / "1801.00001v1.1.json"
    d = json.loads(p.read_text())
    d["cells"][0]["content"] = ["Nonexistent"]
    p.write_text(json.dumps(d))
    with pytest.raises(ScitsrError):
        load_scitsr_table(root, "1801.00001v1.1")
    tables, failed = load_scitsr_dir(root)
    assert len(tables) == 2 and failed[0][0] == "1801.00001v1.1"


def test_malformed_chunk(scitsr_root, tmp_path):
    root = tmp_path / "s"
    shutil.copytree(scitsr_root, root)
    (root / "chunk" / "1801.00001v1.1.chunk").write_text('{"chunks": [{"pos": [1, 2], "text": "x"}]}')
    with pytest.raises(ParseError):
        load_scitsr_table(root, "1801.00001v1.1")


def test_stems_sorted(scitsr_root):
    assert scitsr_stems(scitsr_root) == sorted(scitsr_stems(scitsr_root))
