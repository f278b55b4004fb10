import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_table
from gfte.cellgraph import relative_positions
from gfte.features import (
    PAD,
    UNK,
    Vocabulary,
    build_vocab,
    dilate_ink,
    encode_text,
    node_features,
    preprocess_image,
)


def vocab_of(*texts, max_len=8):
    t = make_table([(0, 0, k, k) for k in range(len(texts))], 1, len(texts), texts=list(texts))
    return build_vocab([t], max_len)


def test_build_vocab_small():
    v = vocab_of("ab", "bc")
    assert v.size == 5
    assert v.index == {"a": 2, "b": 3, "c": 4}
    assert encode_text(v, "z") == [UNK] + [PAD] * 7
    assert vocab_of("ab", "bc") == v and v.fingerprint() == vocab_of("bc", "ab").fingerprint()


def test_build_vocab_empty_corpus():
    with pytest.raises(ValueError):
        build_vocab([])


def test_encode_examples():
    v = vocab_of("0123456789.", max_len=8)
    assert encode_text(v, "") == [PAD] * 8
    ids = encode_text(v, "0.79")
    assert all(i > UNK for i in ids[:4]) and ids[4:] == [PAD] * 4
    long = encode_text(v, "0" * 13)
    assert len(long) == 8 and PAD not in long


@given(st.text(max_size=60))
def test_encode_length_and_range(s):
    v = vocab_of("abc", "xyz", max_len=16)
    ids = encode_text(v, s)
    assert len(ids) == 16 and all(0 <= i < v.size for i in ids)


def test_vocab_json_round_trip():
    v = vocab_of("héllo", "wörld")
    assert Vocabulary.from_json(v.to_json()) == v


def test_dilation_single_pixel():
    img = np.ones((7, 7))
    img[3, 3] = 0.0
    out = dilate_ink(img)
    assert (out[2:5, 2:5] == 0).all() and out.sum() == 49 - 9


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(2, 20)), elements=st.floats(0, 1)))
def test_preprocess_range_and_monotone(img):
    assert (dilate_ink(img) <= img).all()
    out = preprocess_image(img)
    assert out.shape == (256, 256) and out.min() >= 0 and out.max() <= 1


def test_preprocess_white_stays_white():
    assert (preprocess_image(np.ones((40, 70))) == 1.0).all()


def test_preprocess_rule_thickness():
    img = np.ones((512, 512))
    img[200] = 0.0
    out = preprocess_image(img)
    dark = np.flatnonzero(out[:, 128] < 0.75)
    assert 2 <= len(dark) <= 3
    assert abs(dark.mean() - 200 / 2) <= 1.5


@pytest.mark.parametrize("shape", [(0, 4), (1, 5), (4,)])
def test_preprocess_rejects_degenerate(shape):
    with pytest.raises(ValueError):
        preprocess_image(np.ones(shape))


def test_node_features_shapes(synth_tables):
    t = synth_tables[0]
    nodes = relative_positions(t)
    v = build_vocab(synth_tables, 12)
    f = node_features(t, nodes, v, with_image=True)
    assert f.pos.shape == (len(nodes), 8)
    assert f.text_ids.shape == (len(nodes), 12)
    assert f.points.shape == (len(nodes), 2)
    assert f.image.shape == (256, 256)
    assert np.array_equal(f.points, f.pos[:, 4:6])
    assert node_features(t, nodes, None, with_image=False).image is None
