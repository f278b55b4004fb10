"""GFTE edge classifier: GCN over position/text node features, optional
grid-sampled CNN image features, and an MLP over paired node features."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from gfte.cellgraph import CellGraph, GraphError
from gfte.features import FeatureBundle, Vocabulary, node_features, POS_DIM
from gfte.nn import layers as L
from gfte.nn import tensor as T
from gfte.nn.layers import ParamSet
from gfte.nn.tensor import Tensor
from gfte.rng import Xoshiro256
from gfte.table import EdgeSample, TableInstance

CHECKPOINT_MAGIC = b"GFTECKPT\n"
CHECKPOINT_VERSION = 1


class Variant(str, Enum):
    POS = "pos"
    POS_TEXT = "pos_text"
    FULL = "full"

    @property
    def uses_text(self) -> bool:
        return self is not Variant.POS

    @property
    def uses_image(self) -> bool:
        return self is Variant.FULL

    @property
    def label(self) -> str:
        return {"pos": "GFTE-pos", "pos_text": "GFTE-pos+text", "full": "GFTE"}[self.value]


class Direction(str, Enum):
    HORIZONTAL = "h"
    VERTICAL = "v"


class ModelError(ValueError):
    pass


class VocabMismatch(ModelError):
    pass


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.POS
    direction: Direction = Direction.HORIZONTAL
    k: int = 6
    gcn_hidden: int = 64
    text_hidden: int = 64
    embed_dim: int = 32
    mlp_hidden: int = 128
    img_channels: int = 32
    max_len: int = 32
    edge_input_mode: str = "gcn_raw"  # "gcn" | "gcn_raw"
    vocab_fingerprint: Optional[str] = None
    vocab_size: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.edge_input_mode not in ("gcn", "gcn_raw"):
            raise ModelError(f"edge_input_mode must be 'gcn' or 'gcn_raw', got {self.edge_input_mode!r}")
        if not self.variant.uses_text and self.vocab_fingerprint is not None:
            raise ModelError("the pos variant takes no vocabulary")
        if self.variant.uses_image and self.img_channels != L.CONV_CHANNELS[-1]:
            raise ModelError(f"img_channels must be {L.CONV_CHANNELS[-1]} for the three-layer CNN")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["direction"] = self.direction.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ModelError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @property
    def node_dim(self) -> int:
        return POS_DIM + (self.text_hidden if self.variant.uses_text else 0)

    @property
    def edge_side_dim(self) -> int:
        d = self.gcn_hidden
        if self.edge_input_mode == "gcn_raw":
            d += self.node_dim
        if self.variant.uses_image:
            d += self.img_channels
        return d


class GFTEModel:
    """One direction's edge classifier."""

    def __init__(self, config: ModelConfig, params: ParamSet, vocab: Optional[Vocabulary] = None):
        self.config = config
        self.params = params
        self.vocab = vocab
        if config.variant.uses_text:
            if vocab is None or config.vocab_fingerprint is None:
                raise VocabMismatch("text variants need a vocabulary")
            if vocab.fingerprint() != config.vocab_fingerprint:
                raise VocabMismatch(
                    f"vocabulary fingerprint {vocab.fingerprint()} != model's {config.vocab_fingerprint}"
                )
        expected = expected_shapes(config)
        got = params.shapes()
        if expected != got:
            raise CheckpointShapeError(f"parameter shapes {got} do not match architecture {expected}")

    @classmethod
    def create(cls, config: ModelConfig, vocab: Optional[Vocabulary] = None, dtype=np.float32) -> "GFTEModel":
        if config.variant.uses_text:
            if vocab is None:
                raise VocabMismatch("text variants need a vocabulary")
            config = replace(config, vocab_fingerprint=vocab.fingerprint(), vocab_size=vocab.size, max_len=vocab.max_len)
        return cls(config, init_params(config, dtype), vocab)

    # -- feature plumbing ------------------------------------------------------------
    def features(self, t: TableInstance, g: CellGraph) -> FeatureBundle:
        return node_features(
            t,
            list(g.nodes),
            self.vocab if self.config.variant.uses_text else None,
            self.config.variant.uses_image,
        )

    def _check_pair(self, t: TableInstance, g: CellGraph) -> None:
        ids = {c.id for c in t.cells}
        if set(g.node_ids) != ids:
            raise GraphError(f"graph nodes do not match the cells of table {t.source_id!r}")

    # -- forward ---------------------------------------------------------------------------
    def node_embeddings(self, feats: FeatureBundle, g: CellGraph) -> tuple[Tensor, Optional[Tensor]]:
        ps = self.params
        dtype = ps["gcn.0.w"].dtype
        x = Tensor(feats.pos, dtype=dtype)
        if self.config.variant.uses_text:
            x = T.concat([x, L.recurrent_encode(ps, "text", feats.text_ids)], axis=1)
        adj = L.normalized_adjacency(x.shape[0], g.edge_index(), dtype)
        h = L.graph_conv(ps, "gcn.0", x, None, adj)
        h = L.graph_conv(ps, "gcn.1", h, None, adj)
        side = [h]
        if self.config.edge_input_mode == "gcn_raw":
            side.append(x)
        img = None
        if self.config.variant.uses_image:
            fmap = L.conv_stack(ps, "cnn", Tensor(feats.image[None], dtype=dtype))
            img = T.grid_sample(fmap, feats.points)
            side.append(img)
        node = side[0] if len(side) == 1 else T.concat(side, axis=1)
        return node, img

    def edge_logits(self, t: TableInstance, g: CellGraph, feats: Optional[FeatureBundle] = None) -> tuple[Tensor, Tensor]:
        """Logits for the (u,v) and (v,u) orderings of every edge, each (m, 2)."""
        self._check_pair(t, g)
        if not g.edges:
            raise GraphError("graph has no edges")
        feats = feats if feats is not None else self.features(t, g)
        node, _ = self.node_embeddings(feats, g)
        ei = g.edge_index()
        nu = T.take_rows(node, ei[:, 0])
        nv = T.take_rows(node, ei[:, 1])
        l_uv = L.mlp(self.params, "mlp", T.concat([nu, nv], axis=1))
        l_vu = L.mlp(self.params, "mlp", T.concat([nv, nu], axis=1))
        return l_uv, l_vu

    def forward(self, t: TableInstance, g: CellGraph, feats: Optional[FeatureBundle] = None) -> np.ndarray:
        """Per-edge probability of the positive relation, symmetric in (u,v)."""
        l_uv, l_vu = self.edge_logits(t, g, feats)
        p_uv = T.softmax(l_uv.detach(), axis=1).data[:, 1]
        p_vu = T.softmax(l_vu.detach(), axis=1).data[:, 1]
        return (p_uv + p_vu) / 2.0

    def loss(self, t: TableInstance, g: CellGraph, feats: Optional[FeatureBundle] = None, weights=None) -> Tensor:
        """Mean cross-entropy over both orderings of every labeled edge."""
        y = g.labels(self.config.direction.value).astype(np.int64)
        l_uv, l_vu = self.edge_logits(t, g, feats)
        logits = T.concat([l_uv, l_vu], axis=0)
        w = None
        if weights is not None:
            w = np.concatenate([weights, weights])
        return T.cross_entropy(logits, np.concatenate([y, y]), w)


def init_params(config: ModelConfig, dtype=np.float32) -> ParamSet:
    rng = Xoshiro256.named(config.seed, f"init/{config.direction.value}")
    ps = ParamSet()
    if config.variant.uses_text:
        L.init_lstm(ps, "text", config.vocab_size, config.embed_dim, config.text_hidden, rng, dtype)
    L.init_linear(ps, "gcn.0", config.node_dim, config.gcn_hidden, rng, dtype)
    L.init_linear(ps, "gcn.1", config.gcn_hidden, config.gcn_hidden, rng, dtype)
    if config.variant.uses_image:
        L.init_conv_stack(ps, "cnn", rng, dtype=dtype)
    L.init_mlp(ps, "mlp", 2 * config.edge_side_dim, config.mlp_hidden, 2, rng, dtype)
    return ps


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    if config.variant.uses_text:
        h = config.text_hidden
        shapes["text.embed"] = (config.vocab_size, config.embed_dim)
        shapes["text.w_ih"] = (config.embed_dim, 4 * h)
        shapes["text.w_hh"] = (h, 4 * h)
        shapes["text.b"] = (4 * h,)
    shapes["gcn.0.w"] = (config.node_dim, config.gcn_hidden)
    shapes["gcn.0.b"] = (config.gcn_hidden,)
    shapes["gcn.1.w"] = (config.gcn_hidden, config.gcn_hidden)
    shapes["gcn.1.b"] = (config.gcn_hidden,)
    if config.variant.uses_image:
        ch = L.CONV_CHANNELS
        for i, (cin, cout) in enumerate(zip(ch[:-1], ch[1:])):
            shapes[f"cnn.{i}.w"] = (cout, cin, 3, 3)
            shapes[f"cnn.{i}.b"] = (cout,)
    shapes["mlp.0.w"] = (2 * config.edge_side_dim, config.mlp_hidden)
    shapes["mlp.0.b"] = (config.mlp_hidden,)
    shapes["mlp.1.w"] = (config.mlp_hidden, 2)
    shapes["mlp.1.b"] = (2,)
    return shapes


def predict_relations(
    model_h: GFTEModel,
    model_v: GFTEModel,
    t: TableInstance,
    g: CellGraph,
    threshold: float = 0.5,
) -> tuple[list[EdgeSample], np.ndarray, np.ndarray]:
    """Threshold both directions' probabilities (p >= threshold is positive)."""
    if model_h.config.direction is not Direction.HORIZONTAL or model_v.config.direction is not Direction.VERTICAL:
        raise ModelError("predict_relations needs a horizontal and a vertical model, in that order")
    p_h = model_h.forward(t, g)
    p_v = model_v.forward(t, g)
    edges = [EdgeSample(e.src, e.dst, bool(ph >= threshold), bool(pv >= threshold)) for e, ph, pv in zip(g.edges, p_h, p_v)]
    return edges, p_h, p_v


# -- checkpoints ------------------------------------------------------------------------------


def save_checkpoint(model: GFTEModel, path) -> None:
    """JSON header line + little-endian float32 blob, in one file."""
    tensors = []
    chunks = []
    offset = 0
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        chunks.append(arr.tobytes())
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.nbytes
    blob = b"".join(chunks)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "config_fingerprint": model.config.fingerprint(),
        "vocab": model.vocab.to_json() if model.vocab is not None else None,
        "tensors": tensors,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        f.write(blob)


def load_checkpoint(path, expect: Optional[dict] = None) -> GFTEModel:
    """Load a checkpoint; ``expect`` pins config fields (e.g. {"variant": "full"})."""
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointCorruptError(f"{path}: not a GFTE checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    if len(data) < pos + 8:
        raise CheckpointCorruptError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", data[pos : pos + 8])
    pos += 8
    if len(data) < pos + hlen:
        raise CheckpointCorruptError(f"{path}: truncated header")
    try:
        header = json.loads(data[pos : pos + hlen].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptError(f"{path}: unreadable header ({e})") from None
    pos += hlen
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint format {version}, expected {CHECKPOINT_VERSION}")
    blob = data[pos:]
    if len(blob) != header.get("blob_bytes") or hashlib.sha256(blob).hexdigest() != header.get("blob_sha256"):
        raise CheckpointCorruptError(f"{path}: parameter blob is truncated or corrupt")
    try:
        config = ModelConfig.from_dict(header["config"])
    except (ModelError, KeyError, TypeError, ValueError) as e:
        raise CheckpointCorruptError(f"{path}: bad config ({e})") from None
    for key, want in (expect or {}).items():
        have = config.to_dict().get(key)
        if have != (want.value if isinstance(want, Enum) else want):
            raise ConfigMismatchError(f"{path}: checkpoint has {key}={have!r}, expected {want!r}")
    vocab = Vocabulary.from_json(header["vocab"]) if header.get("vocab") else None
    expected = expected_shapes(config)
    ps = ParamSet()
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CheckpointShapeError(f"{path}: unexpected tensor {name!r}")
        if expected[name] != shape:
            raise CheckpointShapeError(f"{path}: tensor {name!r} has shape {shape}, architecture needs {expected[name]}")
        start, count = entry["offset"], entry["count"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).astype(np.float32).reshape(shape)
        ps[name] = Tensor(arr.copy(), dtype=np.float32)
    missing = set(expected) - set(ps.names())
    if missing:
        raise CheckpointShapeError(f"{path}: missing tensors {sorted(missing)}")
    # reorder to architecture order so iteration is canonical
    ordered = ParamSet({k: ps[k] for k in expected})
    return GFTEModel(config, ordered, vocab)
