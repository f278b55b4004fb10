import json
import random

import numpy as np
import pytest

from conftest import make_table
from gfte.cellgraph import build_graph
from gfte.model import Variant, predict_relations
from gfte.train import (
    ConstantPredictor,
    ModelPredictor,
    NumericFailure,
    OraclePredictor,
    TrainConfig,
    TrainingError,
    dataset_hash,
    evaluate,
    format_accuracy_table,
    run_ablation,
    split_holdout,
    train,
)

TINY = dict(gcn_hidden=8, text_hidden=6, embed_dim=4, mlp_hidden=8, max_len=6)


def tiny_cfg(**kw):
    return TrainConfig(**(TINY | dict(epochs=3, k=4) | kw))


def test_memorise_one_by_two_table():
    t = make_table([(0, 0, 0, 0), (0, 0, 1, 1)], 1, 2, texts=["Cash", "12.5"])
    cfg = TrainConfig(**(TINY | dict(epochs=50, holdout_fraction=0.0, lr=1e-2)))
    res = train(cfg, [t])
    assert res.curves["h"][-1].train_accuracy == 1.0
    assert res.curves["v"][-1].train_accuracy == 1.0
    assert res.heldout_idx == [] and res.curves["h"][-1].heldout_accuracy is None


def test_training_deterministic(synth_tables):
    a = train(tiny_cfg(variant="pos_text"), synth_tables[:8])
    b = train(tiny_cfg(variant="pos_text"), synth_tables[:8])
    assert a.curves_csv() == b.curves_csv()
    for n in a.model_h.params.names():
        assert np.array_equal(a.model_h.params[n].data, b.model_h.params[n].data)


def test_loss_curves_csv_shape(synth_tables):
    res = train(tiny_cfg(epochs=2), synth_tables[:6])
    lines = res.curves_csv().splitlines()
    assert lines[0] == "direction,epoch,train_loss,train_accuracy,heldout_accuracy"
    assert len(lines) == 1 + 2 * 2
    assert res.curves["h"][0].train_loss > res.curves["h"][-1].train_loss or len(res.curves["h"]) == 2


def test_empty_dataset():
    with pytest.raises(TrainingError):
        train(tiny_cfg(), [])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(synth_tables):
    with pytest.raises(NumericFailure) as e:
        train(tiny_cfg(lr=1e36, epochs=4), synth_tables[:6])
    assert "epoch" in str(e.value)


@pytest.mark.parametrize("kw", [{"epochs": 0}, {"lr": 0.0}, {"holdout_fraction": 1.0}, {"variant": "tiny"}])
def test_bad_train_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_unknown_train_key():
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 2, "epoch": 3})


def test_split_holdout_90_10(synth_tables):
    tr, ho = split_holdout(synth_tables, 0.1, 0)
    assert len(ho) == 4 and sorted(tr + ho) == list(range(len(synth_tables)))
    assert split_holdout(synth_tables, 0.1, 0) == (tr, ho)
    assert split_holdout(synth_tables, 0.1, 1) != (tr, ho)


def test_patience_stops_early(synth_tables):
    res = train(tiny_cfg(epochs=30, patience=1, lr=1e-6), synth_tables[:10])
    assert len(res.curves["h"]) < 30


# -- evaluation -----------------------------------------------------------------------------


def test_oracle_is_perfect(synth_tables):
    rep = evaluate(OraclePredictor(), synth_tables)
    assert rep.accuracy_h == rep.accuracy_v == 1.0


def test_constant_positive_equals_positive_fraction(synth_tables):
    rep = evaluate(ConstantPredictor(1.0), synth_tables)
    gs = [build_graph(t) for t in synth_tables]
    f_h = sum(g.labels("h").sum() for g in gs) / sum(len(g.edges) for g in gs)
    f_v = sum(g.labels("v").sum() for g in gs) / sum(len(g.edges) for g in gs)
    assert rep.accuracy_h == pytest.approx(f_h) and rep.accuracy_v == pytest.approx(f_v)
    assert rep.h.fp + rep.h.tp == rep.h.total


class FlipOne:
    """Ground truth except the first edge of every table is wrong."""

    def __call__(self, t, g):
        h = g.labels("h").astype(float)
        v = g.labels("v").astype(float)
        h[0] = 1 - h[0]
        return h, v


def test_nine_of_ten_correct():
    t = make_table([(0, 0, c, c) for c in range(5)], 1, 5)  # five cells, complete graph = 10 edges
    rep = evaluate(FlipOne(), [t], complete=True)
    assert rep.h.total == 10 and rep.accuracy_h == pytest.approx(0.9) and rep.accuracy_v == 1.0


def test_report_self_consistency(synth_tables):
    rep = evaluate(FlipOne(), synth_tables, k=5)
    h, v = rep.recount()
    assert h == pytest.approx(rep.accuracy_h) and v == pytest.approx(rep.accuracy_v)
    c = rep.h
    assert rep.accuracy_h == pytest.approx((c.tp + c.tn) / c.total)
    d = rep.to_dict(per_edge=True)
    json.dumps(d)
    assert d["fingerprint"]["dataset"] == dataset_hash(synth_tables)
    assert len(d["tables"]) == len(synth_tables) and "per_edge" in d["tables"][0]


def test_metrics_invariant_under_table_order(synth_tables):
    shuffled = list(synth_tables)
    random.Random(3).shuffle(shuffled)
    a = evaluate(FlipOne(), synth_tables).to_dict()
    b = evaluate(FlipOne(), shuffled).to_dict()
    assert a == b


def test_predict_relations_agrees_with_evaluate(synth_tables):
    res = train(tiny_cfg(epochs=2), synth_tables[:10])
    tables = synth_tables[10:16]
    rep = evaluate(ModelPredictor(res.model_h, res.model_v), tables, k=4)
    correct = total = 0
    for t in tables:
        g = build_graph(t, 4)
        edges, _, _ = predict_relations(res.model_h, res.model_v, t, g)
        correct += sum(e.label_h == p.label_h for e, p in zip(g.edges, edges))
        total += len(edges)
    assert rep.accuracy_h == pytest.approx(correct / total)


def test_format_accuracy_table():
    text = format_accuracy_table([("GFTE-pos", 0.759836, 0.84245), ("GFTE", 0.861019, 0.903031)])
    lines = text.splitlines()
    assert "Network" in lines[1] and "Horizontal prediction" in lines[1] and "Vertical prediction" in lines[1]
    assert "0.842450" in lines[3] and "0.861019" in lines[4]
    assert len({len(x) for x in lines}) == 1


def test_ablation_layout_and_determinism(synth_tables):
    cfg = tiny_cfg(epochs=1, max_len=4)
    a = run_ablation(cfg, synth_tables[:6])
    assert [r.variant for r in a.rows] == [Variant.POS, Variant.POS_TEXT, Variant.FULL]
    text = a.table_text()
    assert "GFTE-pos+text" in text and "| GFTE " in text
    b = run_ablation(cfg, synth_tables[:6])
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
