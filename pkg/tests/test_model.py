import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from gfte.cellgraph import GraphError, build_graph, complete_graph, label_edges
from gfte.features import build_vocab
from gfte.model import (
    CHECKPOINT_MAGIC,
    CheckpointCorruptError,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigMismatchError,
    Direction,
    GFTEModel,
    ModelConfig,
    ModelError,
    Variant,
    VocabMismatch,
    load_checkpoint,
    predict_relations,
    save_checkpoint,
)
from gfte.nn.tensor import precision
from gfte.nn.gradcheck import gradcheck
from gfte.samples import four_cell_table, profit_margin_table
from gfte.table import Cell, TableInstance

SMALL = dict(gcn_hidden=8, text_hidden=6, embed_dim=4, mlp_hidden=10, max_len=8)


@pytest.fixture(scope="module")
def table():
    return profit_margin_table()


@pytest.fixture(scope="module")
def vocab(table):
    return build_vocab([table], 8)


def make(variant, direction=Direction.HORIZONTAL, vocab=None, seed=0, **kw):
    cfg = ModelConfig(variant=variant, direction=direction, seed=seed, **(SMALL | kw))
    return GFTEModel.create(cfg, vocab if Variant(variant).uses_text else None)


def with_texts(t, texts):
    cells = [Cell(c.id, s, c.bbox, *c.rows, *c.cols) for c, s in zip(t.cells, texts)]
    return TableInstance(cells, t.image, t.table_bbox, t.n_rows, t.n_cols, t.unit, t.source_id)


@pytest.mark.parametrize("variant", list(Variant))
def test_probabilities_in_unit_interval(variant, table, vocab):
    m = make(variant, vocab=vocab)
    p = m.forward(table, build_graph(table, 4))
    assert p.shape == (len(build_graph(table, 4).edges),)
    assert ((0 <= p) & (p <= 1)).all()


@pytest.mark.parametrize("variant", list(Variant))
def test_zero_head_gives_one_half(variant, table, vocab):
    m = make(variant, vocab=vocab)
    for n in ("mlp.0.w", "mlp.0.b", "mlp.1.w", "mlp.1.b"):
        m.params[n].data[...] = 0
    assert (m.forward(table, build_graph(table)) == 0.5).all()


def test_symmetry_exact(table, vocab):
    m = make(Variant.POS_TEXT, vocab=vocab, seed=3)
    g = build_graph(table, 5)
    l_uv, l_vu = m.edge_logits(table, g)
    assert not np.allclose(l_uv.data, l_vu.data)  # the head itself is order-sensitive
    p = m.forward(table, g)
    pu = np.exp(l_uv.data[:, 1]) / np.exp(l_uv.data).sum(1)
    pv = np.exp(l_vu.data[:, 1]) / np.exp(l_vu.data).sum(1)
    assert np.allclose(p, (pu + pv) / 2, atol=1e-6)
    # swapping the roles of u and v swaps the two orderings, so the mean is unchanged
    assert np.array_equal((pu + pv) / 2, (pv + pu) / 2)


def test_pos_ignores_text_and_image(table):
    m = make(Variant.POS, seed=1)
    g = build_graph(table)
    base = m.forward(table, g)
    rng = np.random.default_rng(0)
    scrambled = with_texts(table, ["".join(rng.choice(list("xyz019"), 6)) for _ in table.cells])
    assert np.array_equal(m.forward(scrambled, g), base)
    noisy = replace(table, image=rng.random(table.image.shape))
    assert np.array_equal(m.forward(noisy, g), base)


def test_pos_text_ignores_image_but_reads_text(table, vocab):
    m = make(Variant.POS_TEXT, vocab=vocab, seed=1)
    g = build_graph(table)
    base = m.forward(table, g)
    noisy = replace(table, image=np.random.default_rng(0).random(table.image.shape))
    assert np.array_equal(m.forward(noisy, g), base)
    assert not np.array_equal(m.forward(with_texts(table, ["0"] * len(table.cells)), g), base)


def test_full_reads_image(table, vocab):
    m = make(Variant.FULL, vocab=vocab, seed=1)
    g = build_graph(table)
    noisy = replace(table, image=np.random.default_rng(0).random(table.image.shape))
    assert not np.array_equal(m.forward(noisy, g), m.forward(table, g))


def test_forward_deterministic(table, vocab):
    a = make(Variant.FULL, vocab=vocab, seed=5)
    b = make(Variant.FULL, vocab=vocab, seed=5)
    g = build_graph(table)
    assert np.array_equal(a.forward(table, g), b.forward(table, g))


def test_directions_initialise_differently(table):
    h = make(Variant.POS, Direction.HORIZONTAL)
    v = make(Variant.POS, Direction.VERTICAL)
    assert not np.array_equal(h.params["gcn.0.w"].data, v.params["gcn.0.w"].data)


def test_vocab_mismatch(table, vocab):
    m = make(Variant.POS_TEXT, vocab=vocab)
    other = build_vocab([four_cell_table()], 8)
    with pytest.raises(VocabMismatch):
        GFTEModel(m.config, m.params, other)
    with pytest.raises(VocabMismatch):
        GFTEModel.create(ModelConfig(variant=Variant.FULL, **SMALL))


def test_graph_table_mismatch(table):
    m = make(Variant.POS)
    with pytest.raises(GraphError):
        m.forward(four_cell_table(), build_graph(table))


def test_config_validation():
    with pytest.raises(ModelError):
        ModelConfig(edge_input_mode="sideways")
    with pytest.raises(ModelError):
        ModelConfig.from_dict({"variant": "pos", "depth": 3})
    with pytest.raises(ValueError):
        ModelConfig(variant="huge")


def test_predict_relations_threshold_and_oracle(table):
    t = four_cell_table()
    g = build_graph(t, 3)
    mh, mv = make(Variant.POS), make(Variant.POS, Direction.VERTICAL)
    for m in (mh, mv):
        for n in ("mlp.0.w", "mlp.0.b", "mlp.1.w", "mlp.1.b"):
            m.params[n].data[...] = 0
    edges, ph, pv = predict_relations(mh, mv, t, g)
    assert (ph == 0.5).all() and all(e.label_h and e.label_v for e in edges)  # ties count as positive
    edges, _, _ = predict_relations(mh, mv, t, g, threshold=0.51)
    assert not any(e.label_h or e.label_v for e in edges)
    with pytest.raises(ModelError):
        predict_relations(mv, mh, t, g)


def test_loss_uses_both_orderings(table):
    m = make(Variant.POS, seed=2)
    g = build_graph(table, 4)
    y = g.labels("h")
    l_uv, l_vu = m.edge_logits(table, g)
    z = np.concatenate([l_uv.data, l_vu.data]).astype(np.float64)
    yy = np.concatenate([y, y]).astype(int)
    ref = np.mean(np.log(np.exp(z).sum(1)) - z[np.arange(len(yy)), yy])
    assert np.isclose(m.loss(table, g).item(), ref, rtol=1e-5)


@pytest.mark.parametrize("variant", [Variant.POS, Variant.POS_TEXT])
def test_end_to_end_gradcheck(variant):
    t = four_cell_table()
    v = build_vocab([t], 6)
    with precision(np.float64):
        cfg = ModelConfig(variant=variant, **(SMALL | {"max_len": 6}))
        m = GFTEModel.create(cfg, v if variant.uses_text else None, dtype=np.float64)
        for n in m.params.names():
            if n.endswith(".b"):
                m.params[n].data = np.random.default_rng(1).normal(0, 0.3, m.params[n].shape)
        g = label_edges(complete_graph(t), t)
        feats = m.features(t, g)
        rep = gradcheck(lambda: m.loss(t, g, feats), m.params)
    assert max(rep.values()) < 1e-4, rep


# -- checkpoints -------------------------------------------------------------------------------


@pytest.mark.parametrize("variant", list(Variant))
def test_checkpoint_round_trip_bit_exact(tmp_path, variant, table, vocab):
    m = make(variant, Direction.VERTICAL, vocab=vocab, seed=9)
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == m.config
    for n in m.params.names():
        assert np.array_equal(back.params[n].data, m.params[n].data)
    g = build_graph(table)
    assert np.array_equal(back.forward(table, g), m.forward(table, g))
    save_checkpoint(back, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "m.ckpt").read_bytes()


def test_truncated_checkpoint(tmp_path):
    save_checkpoint(make(Variant.POS), tmp_path / "m.ckpt")
    data = (tmp_path / "m.ckpt").read_bytes()
    for cut in (5, len(CHECKPOINT_MAGIC) + 4, len(data) // 2, len(data) - 3):
        (tmp_path / "cut.ckpt").write_bytes(data[:cut])
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(tmp_path / "cut.ckpt")


def test_corrupt_blob(tmp_path):
    save_checkpoint(make(Variant.POS), tmp_path / "m.ckpt")
    data = bytearray((tmp_path / "m.ckpt").read_bytes())
    data[-1] ^= 0xFF
    (tmp_path / "bad.ckpt").write_bytes(bytes(data))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_variant_mismatch(tmp_path):
    save_checkpoint(make(Variant.POS), tmp_path / "m.ckpt")
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(tmp_path / "m.ckpt", expect={"variant": Variant.FULL})


def _rewrite_header(path, edit):
    data = path.read_bytes()
    p = len(CHECKPOINT_MAGIC)
    (n,) = struct.unpack("<Q", data[p : p + 8])
    header = json.loads(data[p + 8 : p + 8 + n])
    edit(header)
    head = json.dumps(header).encode()
    path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<Q", len(head)) + head + data[p + 8 + n :])


def test_version_and_shape_errors(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(make(Variant.POS), path)
    _rewrite_header(path, lambda h: h.update(format_version=99))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)

    save_checkpoint(make(Variant.POS), path)

    def widen(h):
        h["config"]["gcn_hidden"] = 9

    _rewrite_header(path, widen)
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(path)
