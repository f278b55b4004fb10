"""Per-node features: position vectors, character ids, and image preprocessing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from gfte.cellgraph import NodeGeometry
from gfte.table import TableInstance

PAD = 0
UNK = 1
DEFAULT_MAX_LEN = 32
IMAGE_SIZE = 256
POS_DIM = 8


@dataclass(frozen=True)
class Vocabulary:
    chars: tuple[str, ...]
    max_len: int = DEFAULT_MAX_LEN

    @property
    def size(self) -> int:
        return len(self.chars) + 2

    def __len__(self) -> int:
        return self.size

    @property
    def index(self) -> dict[str, int]:
        return {ch: i + 2 for i, ch in enumerate(self.chars)}

    def to_json(self) -> dict:
        return {"max_len": self.max_len, "chars": {str(ord(ch)): i + 2 for i, ch in enumerate(self.chars)}}

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        items = sorted(((int(i), chr(int(cp))) for cp, i in d["chars"].items()))
        if [i for i, _ in items] != list(range(2, len(items) + 2)):
            raise ValueError("vocabulary ids must be dense from 2")
        return cls(tuple(ch for _, ch in items), int(d["max_len"]))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def build_vocab(corpus: Iterable[TableInstance], max_len: int = DEFAULT_MAX_LEN) -> Vocabulary:
    chars = set()
    n = 0
    for t in corpus:
        n += 1
        for c in t.cells:
            chars.update(c.text)
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(tuple(sorted(chars)), max_len)


def encode_text(v: Vocabulary, s: str) -> list[int]:
    idx = v.index
    ids = [idx.get(ch, UNK) for ch in s[: v.max_len]]
    return ids + [PAD] * (v.max_len - len(ids))


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment and edge clamping."""
    H, W = img.shape

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    ylo, yhi, wy = axis_weights(H, out_h)
    xlo, xhi, wx = axis_weights(W, out_w)
    rows = img[ylo] * (1 - wy)[:, None] + img[yhi] * wy[:, None]
    return rows[:, xlo] * (1 - wx)[None, :] + rows[:, xhi] * wx[None, :]


def dilate_ink(img: np.ndarray) -> np.ndarray:
    """One 3x3 minimum-filter pass: thickens dark strokes on a light page."""
    return ndimage.minimum_filter(img, size=3, mode="nearest")


def preprocess_image(img: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if min(img.shape) < 2:
        raise ValueError(f"image must be at least 2x2, got {img.shape}")
    out = resize_bilinear(dilate_ink(img), size, size)
    return np.clip(out, 0.0, 1.0)


@dataclass
class FeatureBundle:
    """Node features of one table; rows follow the graph's node order."""

    pos: np.ndarray  # (n, 8)
    text_ids: np.ndarray  # (n, max_len)
    points: np.ndarray  # (n, 2) sampling points (u, v)
    image: Optional[np.ndarray] = None  # (256, 256) after preprocessing
    img_feat: Optional[np.ndarray] = None


def node_features(
    t: TableInstance,
    nodes: list[NodeGeometry],
    vocab: Optional[Vocabulary],
    with_image: bool,
) -> FeatureBundle:
    by_id = t.cells_by_id()
    pos = np.array([nd.pos_vector() for nd in nodes], dtype=np.float64)
    if vocab is not None:
        text_ids = np.array([encode_text(vocab, by_id[nd.cell_id].text) for nd in nodes], dtype=np.int64)
    else:
        text_ids = np.zeros((len(nodes), 0), dtype=np.int64)
    points = np.array([[nd.rel_cx, nd.rel_cy] for nd in nodes], dtype=np.float64)
    image = preprocess_image(t.image) if with_image else None
    return FeatureBundle(pos, text_ids, points, image)
