"""Finite-difference checks of every layer and of the full model loss (float64)."""

from __future__ import annotations

import numpy as np

from gfte.cellgraph import build_graph
from gfte.features import build_vocab
from gfte.model import Direction, GFTEModel, ModelConfig, Variant
from gfte.nn import layers as L
from gfte.nn import tensor as T
from gfte.nn.gradcheck import gradcheck
from gfte.nn.layers import ParamSet
from gfte.nn.tensor import Tensor, precision
from gfte.rng import Xoshiro256
from gfte.samples import four_cell_table

TOLERANCE = 1e-4


def _rand(rng: Xoshiro256, shape, scale=1.0) -> np.ndarray:
    n = int(np.prod(shape))
    return (np.array(rng.uniform_array(n, -scale, scale)).reshape(shape)).astype(np.float64)


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    # random projection keeps gradients away from the symmetric all-ones case
    return T.tsum(T.mul(out, Tensor(w)))


def layer_checks(seed: int = 0) -> dict[str, dict[str, float]]:
    """Gradcheck report per layer on randomised small shapes."""
    rng = Xoshiro256.named(seed, "gradcheck-layers")
    out: dict[str, dict[str, float]] = {}
    with precision(np.float64):
        # embedding
        ps = ParamSet({"table": Tensor(_rand(rng, (6, 4)))})
        ids = np.array([3, 0, 3, 5, 1])
        w = _rand(rng, (5, 4))
        out["embedding"] = gradcheck(lambda: _weighted_sum(L.embedding(ps["table"], ids), w), ps)

        # recurrent encoder
        ps = ParamSet()
        L.init_lstm(ps, "text", 7, 4, 5, rng, np.float64)
        ps["text.b"].data[:] = _rand(rng, (20,), 0.5)
        seqs = np.array([[2, 3, 0, 6], [1, 5, 4, 0]])
        w = _rand(rng, (2, 5))
        out["recurrent_encode"] = gradcheck(lambda: _weighted_sum(L.recurrent_encode(ps, "text", seqs), w), ps)

        # convolution (one stride-2 block on a small image)
        ps = ParamSet()
        L.init_conv_stack(ps, "cnn", rng, channels=(1, 3, 2), dtype=np.float64)
        ps["cnn.0.b"].data[:] = _rand(rng, (3,), 0.3)
        img = Tensor(_rand(rng, (1, 12, 12)))
        w = _rand(rng, (2, 3, 3))
        out["conv_stack"] = gradcheck(
            lambda: _weighted_sum(L.conv_stack(ps, "cnn", img, n_layers=2, expect_size=None), w), ps
        )

        # graph convolution
        ps = ParamSet()
        L.init_linear(ps, "gcn", 3, 4, rng, np.float64)
        ps["gcn.b"].data[:] = _rand(rng, (4,), 0.3)
        H = Tensor(_rand(rng, (5, 3)))
        edges = np.array([[0, 1], [1, 2], [2, 3], [0, 4]])
        w = _rand(rng, (5, 4))
        out["graph_conv"] = gradcheck(lambda: _weighted_sum(L.graph_conv(ps, "gcn", H, edges), w), ps)

        # mlp + cross-entropy
        ps = ParamSet()
        L.init_mlp(ps, "mlp", 6, 8, 2, rng, np.float64)
        ps["mlp.0.b"].data[:] = _rand(rng, (8,), 0.3)
        x = Tensor(_rand(rng, (7, 6)))
        y = np.array([0, 1, 1, 0, 1, 0, 0])
        out["mlp"] = gradcheck(lambda: T.cross_entropy(L.mlp(ps, "mlp", x), y), ps)

        # cross-entropy on raw logits
        ps = ParamSet({"logits": Tensor(_rand(rng, (6, 2), 3.0))})
        y = np.array([1, 0, 1, 1, 0, 0])
        out["cross_entropy"] = gradcheck(lambda: T.cross_entropy(ps["logits"], y), ps)

        # grid sampling w.r.t. the feature map
        ps = ParamSet({"fmap": Tensor(_rand(rng, (3, 5, 6)))})
        pts = np.array([[0.1, 0.2], [0.5, 0.5], [0.93, 0.41], [1.0, 0.0], [0.0, 1.0]])
        w = _rand(rng, (5, 3))
        out["grid_sample"] = gradcheck(lambda: _weighted_sum(T.grid_sample(ps["fmap"], pts), w), ps)

        # core ops composed
        ps = ParamSet({"a": Tensor(_rand(rng, (3, 4))), "b": Tensor(_rand(rng, (4, 2)))})
        w = _rand(rng, (3, 6))

        def core():
            a, b = ps["a"], ps["b"]
            m = T.matmul(a, b)
            z = T.concat([T.sigmoid(m), T.tanh(T.mul(m, m)), T.softmax(m, axis=1)], axis=1)
            return T.add(_weighted_sum(z, w), T.mean(T.relu(a[:, 1:3])))

        out["core_ops"] = gradcheck(core, ps)
    return out


def model_check(seed: int = 0, variant: Variant = Variant.FULL, max_len: int = 8) -> dict[str, float]:
    """Gradcheck of the full edge loss on a four-cell table."""
    t = four_cell_table()
    vocab = build_vocab([t], max_len=max_len) if variant.uses_text else None
    cfg = ModelConfig(variant=variant, direction=Direction.HORIZONTAL, seed=seed, max_len=max_len)
    with precision(np.float64):
        model = GFTEModel.create(cfg, vocab, dtype=np.float64)
        rng = Xoshiro256.named(seed, "gradcheck-model")
        # non-zero biases so no parameter sits at a degenerate point
        for name, p in model.params.items():
            if name.endswith(".b"):
                p.data[:] = _rand(rng, p.shape, 0.1)
        g = build_graph(t, k=3)
        feats = model.features(t, g)
        return gradcheck(lambda: model.loss(t, g, feats), model.params)


def format_report(reports: dict[str, dict[str, float]], tol: float = TOLERANCE) -> str:
    rows = [(f"{group}:{name}", err) for group, rep in reports.items() for name, err in rep.items()]
    width = max(len(r[0]) for r in rows)
    lines = [f"{'tensor'.ljust(width)}  max rel err  status"]
    for name, err in rows:
        lines.append(f"{name.ljust(width)}  {err:11.3e}  {'ok' if err < tol else 'FAIL'}")
    worst = max(err for _, err in rows)
    lines.append(f"{'max'.ljust(width)}  {worst:11.3e}  {'ok' if worst < tol else 'FAIL'}")
    return "\n".join(lines)


def run_all(seed: int = 0) -> dict[str, dict[str, float]]:
    reports = layer_checks(seed)
    reports["model"] = model_check(seed)
    return reports
