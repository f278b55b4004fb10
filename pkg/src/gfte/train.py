"""Training loop, edge-accuracy metrics and the three-variant ablation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from gfte.cellgraph import CellGraph, build_graph, complete_graph, label_edges
from gfte.features import FeatureBundle, Vocabulary, build_vocab
from gfte.ingest.io import table_to_dict
from gfte.model import Direction, GFTEModel, ModelConfig, Variant
from gfte.nn.optim import AdamState, NonFiniteGradient, adam_step
from gfte.rng import Xoshiro256
from gfte.table import TableInstance

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class NumericFailure(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "pos"
    epochs: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    k: int = 6
    seed: int = 0
    patience: Optional[int] = None
    holdout_fraction: float = 0.1
    class_weighting: bool = False
    gcn_hidden: int = 64
    text_hidden: int = 64
    embed_dim: int = 32
    mlp_hidden: int = 128
    max_len: int = 32
    edge_input_mode: str = "gcn_raw"

    def __post_init__(self):
        Variant(self.variant)
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be positive when set")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config key(s): {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def model_config(self, direction: Direction) -> ModelConfig:
        return ModelConfig(
            variant=Variant(self.variant),
            direction=direction,
            k=self.k,
            gcn_hidden=self.gcn_hidden,
            text_hidden=self.text_hidden,
            embed_dim=self.embed_dim,
            mlp_hidden=self.mlp_hidden,
            max_len=self.max_len,
            edge_input_mode=self.edge_input_mode,
            seed=self.seed,
        )


def dataset_hash(tables: Sequence[TableInstance]) -> str:
    """Order-independent digest of table annotations."""
    digests = sorted(
        hashlib.sha256(json.dumps(table_to_dict(t), sort_keys=True, ensure_ascii=False).encode()).hexdigest()
        for t in tables
    )
    return hashlib.sha256("".join(digests).encode()).hexdigest()[:16]


def split_holdout(tables: Sequence[TableInstance], fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded split of table indices into (train, held_out)."""
    n = len(tables)
    order = list(range(n))
    Xoshiro256.named(seed, "split").shuffle(order)
    n_hold = int(round(n * fraction)) if n > 1 else 0
    n_hold = min(n_hold, n - 1)
    return sorted(order[n_hold:]), sorted(order[:n_hold])


@dataclass
class Prepared:
    table: TableInstance
    graph: CellGraph
    feats: FeatureBundle


def prepare(tables: Sequence[TableInstance], model: GFTEModel, k: int, complete: bool = False) -> list[Prepared]:
    out = []
    for t in tables:
        g = label_edges(complete_graph(t), t) if complete else build_graph(t, k)
        out.append(Prepared(t, g, model.features(t, g)))
    return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    heldout_accuracy: Optional[float]


@dataclass
class DirectionRun:
    model: GFTEModel
    curve: list[EpochRecord]
    best_epoch: int


@dataclass
class TrainResult:
    model_h: GFTEModel
    model_v: GFTEModel
    curves: dict[str, list[EpochRecord]]
    train_idx: list[int]
    heldout_idx: list[int]
    config: TrainConfig
    seconds: float = 0.0

    def curves_csv(self) -> str:
        lines = ["direction,epoch,train_loss,train_accuracy,heldout_accuracy"]
        for d in ("h", "v"):
            for r in self.curves[d]:
                ho = "" if r.heldout_accuracy is None else f"{r.heldout_accuracy:.6f}"
                lines.append(f"{d},{r.epoch},{r.train_loss:.6f},{r.train_accuracy:.6f},{ho}")
        return "\n".join(lines) + "\n"


def _accuracy(model: GFTEModel, items: Sequence[Prepared]) -> float:
    correct = total = 0
    d = model.config.direction.value
    for it in items:
        p = model.forward(it.table, it.graph, it.feats)
        y = it.graph.labels(d)
        correct += int(((p >= 0.5) == y).sum())
        total += y.size
    return correct / total if total else float("nan")


def _class_weights(items: Sequence[Prepared], direction: str) -> tuple[float, float]:
    pos = sum(int(it.graph.labels(direction).sum()) for it in items)
    tot = sum(len(it.graph.edges) for it in items)
    neg = tot - pos
    if pos == 0 or neg == 0:
        return 1.0, 1.0
    return tot / (2.0 * neg), tot / (2.0 * pos)


def train_direction(
    cfg: TrainConfig,
    direction: Direction,
    train_items: Sequence[Prepared],
    heldout_items: Sequence[Prepared],
    vocab: Optional[Vocabulary],
    progress: Optional[Callable[[str, EpochRecord], None]] = None,
) -> DirectionRun:
    model = GFTEModel.create(cfg.model_config(direction), vocab)
    d = direction.value
    w_neg, w_pos = _class_weights(train_items, d) if cfg.class_weighting else (1.0, 1.0)
    shuffle_rng = Xoshiro256.named(cfg.seed, f"shuffle/{d}")
    state = AdamState()
    curve: list[EpochRecord] = []
    best = (-1.0, 0)
    best_params = None
    since_best = 0
    order = list(range(len(train_items)))
    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng.shuffle(order)
        losses = []
        for i in order:
            it = train_items[i]
            weights = None
            if cfg.class_weighting:
                y = it.graph.labels(d)
                weights = np.where(y, w_pos, w_neg)
            model.params.zero_grad()
            loss = model.loss(it.table, it.graph, it.feats, weights)
            lv = loss.item()
            if not math.isfinite(lv):
                raise NumericFailure(f"non-finite loss {lv} at epoch {epoch}, table {it.table.source_id!r} ({d})")
            loss.backward()
            try:
                adam_step(model.params, model.params.grads(), state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            except NonFiniteGradient as e:
                raise NumericFailure(f"{e} at epoch {epoch}, table {it.table.source_id!r} ({d})") from None
            losses.append(lv)
        train_acc = _accuracy(model, train_items)
        held = _accuracy(model, heldout_items) if heldout_items else None
        rec = EpochRecord(epoch, float(np.mean(losses)), train_acc, held)
        curve.append(rec)
        log.info("[%s] epoch %d loss %.4f train %.4f heldout %s", d, epoch, rec.train_loss, train_acc, held)
        if progress:
            progress(d, rec)
        score = held if held is not None else train_acc
        if cfg.patience is not None:
            if score > best[0]:
                best = (score, epoch)
                best_params = model.params.copy()
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
    best_epoch = curve[-1].epoch
    if cfg.patience is not None and best_params is not None:
        model = GFTEModel(model.config, best_params, vocab)
        best_epoch = best[1]
    return DirectionRun(model, curve, best_epoch)


def train(
    cfg: TrainConfig,
    tables: Sequence[TableInstance],
    vocab: Optional[Vocabulary] = None,
    progress: Optional[Callable[[str, EpochRecord], None]] = None,
) -> TrainResult:
    """Train independent horizontal and vertical models on ``tables``."""
    if not tables:
        raise TrainingError("no tables to train on")
    t0 = time.perf_counter()
    variant = Variant(cfg.variant)
    train_idx, held_idx = split_holdout(tables, cfg.holdout_fraction, cfg.seed)
    if variant.uses_text and vocab is None:
        vocab = build_vocab([tables[i] for i in train_idx], cfg.max_len)
    probe = GFTEModel.create(cfg.model_config(Direction.HORIZONTAL), vocab)
    items = prepare(tables, probe, cfg.k)
    train_items = [items[i] for i in train_idx]
    held_items = [items[i] for i in held_idx]
    runs = {}
    for direction in (Direction.HORIZONTAL, Direction.VERTICAL):
        runs[direction.value] = train_direction(cfg, direction, train_items, held_items, vocab, progress)
    return TrainResult(
        runs["h"].model,
        runs["v"].model,
        {d: r.curve for d, r in runs.items()},
        train_idx,
        held_idx,
        cfg,
        time.perf_counter() - t0,
    )


# -- evaluation ------------------------------------------------------------------------


class Predictor(Protocol):
    def __call__(self, t: TableInstance, g: CellGraph) -> tuple[np.ndarray, np.ndarray]: ...


class ModelPredictor:
    def __init__(self, model_h: GFTEModel, model_v: GFTEModel):
        if model_h.config.direction is not Direction.HORIZONTAL or model_v.config.direction is not Direction.VERTICAL:
            raise ValueError("expected (horizontal, vertical) models")
        self.model_h = model_h
        self.model_v = model_v

    def __call__(self, t, g):
        return self.model_h.forward(t, g), self.model_v.forward(t, g)

    def describe(self) -> dict:
        return {
            "kind": "model",
            "h": self.model_h.config.fingerprint(),
            "v": self.model_v.config.fingerprint(),
            "variant": self.model_h.config.variant.value,
        }


class OraclePredictor:
    """Returns ground-truth labels as probabilities 0/1."""

    def __call__(self, t, g):
        return g.labels("h").astype(np.float64), g.labels("v").astype(np.float64)

    def describe(self) -> dict:
        return {"kind": "oracle"}


class ConstantPredictor:
    def __init__(self, p: float):
        self.p = float(p)

    def __call__(self, t, g):
        m = len(g.edges)
        return np.full(m, self.p), np.full(m, self.p)

    def describe(self) -> dict:
        return {"kind": "constant", "p": self.p}


@dataclass
class Confusion:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, pred: np.ndarray, truth: np.ndarray) -> None:
        pred = np.asarray(pred, dtype=bool)
        truth = np.asarray(truth, dtype=bool)
        self.tp += int((pred & truth).sum())
        self.tn += int((~pred & ~truth).sum())
        self.fp += int((pred & ~truth).sum())
        self.fn += int((~pred & truth).sum())

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else float("nan")

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else float("nan")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
            "total": self.total,
        }


@dataclass
class TableResult:
    source_id: str
    edges: list[tuple[int, int]]
    truth_h: list[bool]
    truth_v: list[bool]
    pred_h: list[bool]
    pred_v: list[bool]

    def accuracy(self, d: str) -> float:
        t = self.truth_h if d == "h" else self.truth_v
        p = self.pred_h if d == "h" else self.pred_v
        return sum(a == b for a, b in zip(t, p)) / len(t) if t else float("nan")


@dataclass
class EvalReport:
    h: Confusion
    v: Confusion
    tables: list[TableResult]
    fingerprint: dict = field(default_factory=dict)

    @property
    def accuracy_h(self) -> float:
        return self.h.accuracy

    @property
    def accuracy_v(self) -> float:
        return self.v.accuracy

    def macro_accuracy(self, d: str) -> float:
        vals = [r.accuracy(d) for r in self.tables if r.edges]
        return float(np.mean(vals)) if vals else float("nan")

    def recount(self) -> tuple[float, float]:
        """Accuracy recomputed from the stored per-edge predictions."""
        out = []
        for d in ("h", "v"):
            correct = total = 0
            for r in self.tables:
                t = r.truth_h if d == "h" else r.truth_v
                p = r.pred_h if d == "h" else r.pred_v
                correct += sum(a == b for a, b in zip(t, p))
                total += len(t)
            out.append(correct / total if total else float("nan"))
        return out[0], out[1]

    def to_dict(self, per_edge: bool = False) -> dict:
        d = {
            "fingerprint": self.fingerprint,
            "horizontal": self.h.to_dict() | {"macro_accuracy": self.macro_accuracy("h")},
            "vertical": self.v.to_dict() | {"macro_accuracy": self.macro_accuracy("v")},
            "tables": [
                {
                    "source_id": r.source_id,
                    "edges": len(r.edges),
                    "accuracy_h": r.accuracy("h"),
                    "accuracy_v": r.accuracy("v"),
                }
                for r in self.tables
            ],
        }
        if per_edge:
            for rec, r in zip(d["tables"], self.tables):
                rec["per_edge"] = [
                    [a, b, th, tv, ph, pv]
                    for (a, b), th, tv, ph, pv in zip(r.edges, r.truth_h, r.truth_v, r.pred_h, r.pred_v)
                ]
        return _json_clean(d)


def _json_clean(x):
    if isinstance(x, float):
        return None if math.isnan(x) else x
    if isinstance(x, dict):
        return {k: _json_clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_clean(v) for v in x]
    return x


def evaluate(
    predictor: Predictor,
    tables: Sequence[TableInstance],
    k: int = 6,
    threshold: float = 0.5,
    complete: bool = False,
    fingerprint: Optional[dict] = None,
) -> EvalReport:
    """Micro-averaged per-direction edge accuracy over each table's candidate edges."""
    ch, cv = Confusion(), Confusion()
    results = []
    for t in sorted(tables, key=lambda t: t.source_id):
        g = label_edges(complete_graph(t), t) if complete else build_graph(t, k)
        p_h, p_v = predictor(t, g)
        yh, yv = g.labels("h"), g.labels("v")
        ph = np.asarray(p_h) >= threshold
        pv = np.asarray(p_v) >= threshold
        ch.add(ph, yh)
        cv.add(pv, yv)
        results.append(
            TableResult(
                t.source_id,
                [(e.src, e.dst) for e in g.edges],
                yh.tolist(),
                yv.tolist(),
                ph.tolist(),
                pv.tolist(),
            )
        )
    fp = dict(fingerprint or {})
    describe = getattr(predictor, "describe", None)
    if describe is not None:
        fp.setdefault("predictor", describe())
    fp.setdefault("dataset", dataset_hash(tables))
    fp.setdefault("k", k)
    fp.setdefault("edges", "complete" if complete else "knn")
    return EvalReport(ch, cv, results, fp)


# -- ablation --------------------------------------------------------------------------------

VARIANT_ORDER = (Variant.POS, Variant.POS_TEXT, Variant.FULL)


@dataclass
class AblationRow:
    variant: Variant
    accuracy_h: float
    accuracy_v: float
    report: EvalReport
    seconds: float


@dataclass
class AblationReport:
    rows: list[AblationRow]
    config: TrainConfig
    dataset: str

    def table_text(self) -> str:
        return format_accuracy_table(
            [(r.variant.label, r.accuracy_h, r.accuracy_v) for r in self.rows], first_header="Network"
        )

    def to_dict(self) -> dict:
        return _json_clean(
            {
                "config": self.config.to_dict(),
                "config_fingerprint": self.config.fingerprint(),
                "dataset": self.dataset,
                "rows": [
                    {
                        "network": r.variant.label,
                        "variant": r.variant.value,
                        "horizontal": r.accuracy_h,
                        "vertical": r.accuracy_v,
                    }
                    for r in self.rows
                ],
            }
        )


def format_accuracy_table(rows: Sequence[tuple[str, float, float]], first_header: str = "Network") -> str:
    """Aligned text table: name, horizontal and vertical accuracy to 6 decimals."""
    heads = (first_header, "Horizontal prediction", "Vertical prediction")
    cells = [(n, f"{h:.6f}", f"{v:.6f}") for n, h, v in rows]
    widths = [max(len(heads[i]), *(len(c[i]) for c in cells)) for i in range(3)]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [sep, "| " + " | ".join(h.ljust(w) for h, w in zip(heads, widths)) + " |", sep]
    for c in cells:
        lines.append("| " + c[0].ljust(widths[0]) + " | " + " | ".join(x.rjust(w) for x, w in zip(c[1:], widths[1:])) + " |")
    lines.append(sep)
    return "\n".join(lines)


def run_ablation(
    cfg: TrainConfig,
    tables: Sequence[TableInstance],
    variants: Sequence[Variant] = VARIANT_ORDER,
    progress=None,
) -> AblationReport:
    """Train every variant with identical seeds and data; score on the held-out split."""
    rows = []
    for var in variants:
        t0 = time.perf_counter()
        res = train(replace(cfg, variant=Variant(var).value), tables, progress=progress)
        held = [tables[i] for i in res.heldout_idx] or [tables[i] for i in res.train_idx]
        rep = evaluate(ModelPredictor(res.model_h, res.model_v), held, k=cfg.k)
        rows.append(AblationRow(Variant(var), rep.accuracy_h, rep.accuracy_v, rep, time.perf_counter() - t0))
    return AblationReport(rows, cfg, dataset_hash(tables))
