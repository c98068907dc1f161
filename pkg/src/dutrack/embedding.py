"""Raster-to-token and text-to-token conversion.

Images pass through three down-sampling stages (a 4x4 patch projection and
two 2x2 merge projections, 16x total per axis). Text passes through a
lowercase whitespace tokenizer over a small closed vocabulary whose first
three entries are fixed as [CLS], [PAD], [UNK].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import language_update
from .kernels import ShapeError, require_finite

CLS_TOKEN = "[CLS]"
PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"

DEFAULT_CATEGORIES = ("rectangle", "ellipse")

PATCH = 16


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:3] != [CLS_TOKEN, PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with [CLS], [PAD], [UNK]")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    cls_id = 0
    pad_id = 1
    unk_id = 2

    def id_of(self, word: str) -> int:
        return self.index.get(word, self.unk_id)

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        seen: list[str] = [CLS_TOKEN, PAD_TOKEN, UNK_TOKEN]
        for w in words:
            if w not in seen:
                seen.append(w)
        return cls(seen)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def default_vocabulary(extra_words=()) -> Vocabulary:
    """Closed vocabulary covering the caption grammar plus known categories."""
    words = list(language_update.caption_words())
    words += list(DEFAULT_CATEGORIES)
    words += sorted(set(extra_words) - set(words))
    return Vocabulary.from_words(words)


def tokenize_text(text: str, vocab: Vocabulary, n: int) -> np.ndarray:
    """Fixed-length id sequence: [CLS], then up to n-1 word ids, [PAD]-padded."""
    if n < 2:
        raise ValueError("token count must be at least 2")
    ids = [vocab.cls_id]
    for word in text.lower().split()[: n - 1]:
        ids.append(vocab.id_of(word))
    ids.extend([vocab.pad_id] * (n - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def embed_text(ids: np.ndarray, table: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Row i = table[ids[i]] + positions[i]."""
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise ShapeError("ids must be a 1-d sequence")
    if ids.min(initial=0) < 0 or (ids.size and int(ids.max()) >= table.shape[0]):
        raise ValueError("token id out of vocabulary range")
    if positions.shape != (ids.size, table.shape[1]):
        raise ShapeError(
            f"positions shape {positions.shape} does not match ({ids.size},{table.shape[1]})"
        )
    return table[ids] + positions


# ---------------------------------------------------------------------------
# patch embedding


@dataclass
class PatchEmbedParams:
    """Three projection stages: 4x4 patches, then two 2x2 merges."""

    w_stage1: np.ndarray  # (48, c1)
    b_stage1: np.ndarray
    w_stage2: np.ndarray  # (4*c1, c2)
    b_stage2: np.ndarray
    w_stage3: np.ndarray  # (4*c2, d)
    b_stage3: np.ndarray

    @property
    def width(self) -> int:
        return self.w_stage3.shape[1]

    def validate(self) -> None:
        c1 = self.w_stage1.shape[1]
        c2 = self.w_stage2.shape[1]
        if self.w_stage1.shape[0] != 48:
            raise ShapeError("stage-1 projection must consume 4x4x3 pixel patches")
        if self.w_stage2.shape[0] != 4 * c1 or self.w_stage3.shape[0] != 4 * c2:
            raise ShapeError("merge stages must consume 2x2 token neighborhoods")
        for w, b in ((self.w_stage1, self.b_stage1), (self.w_stage2, self.b_stage2), (self.w_stage3, self.b_stage3)):
            if b.shape != (w.shape[1],):
                raise ShapeError("bias width does not match projection")

    @classmethod
    def create(cls, d: int, rng: np.random.Generator, dtype=np.float64) -> "PatchEmbedParams":
        if d % 4 != 0:
            raise ValueError("embedding width must be divisible by 4")
        c1, c2 = d // 4, d // 2
        def w(rows, cols):
            return (rng.standard_normal((rows, cols)) / np.sqrt(rows)).astype(dtype)
        p = cls(
            w(48, c1), np.zeros(c1, dtype=dtype),
            w(4 * c1, c2), np.zeros(c2, dtype=dtype),
            w(4 * c2, d), np.zeros(d, dtype=dtype),
        )
        p.validate()
        return p


def _merge_2x2(grid: np.ndarray) -> np.ndarray:
    h, w, c = grid.shape
    return grid.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h // 2, w // 2, 4 * c)


def _unmerge_2x2(grid: np.ndarray) -> np.ndarray:
    h, w, c4 = grid.shape
    c = c4 // 4
    return grid.reshape(h, w, 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(2 * h, 2 * w, c)


def embed_image(img: np.ndarray, params: PatchEmbedParams, positions: np.ndarray | None = None) -> np.ndarray:
    """Tokens for a raster with sides divisible by 16; token (r, c) covers the
    pixel block [16r, 16r+16) x [16c, 16c+16) and tokens are row-major."""
    tokens, _ = embed_image_cached(img, params, positions)
    return tokens


def embed_image_cached(img, params: PatchEmbedParams, positions=None):
    params.validate()
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an HxWx3 raster, got shape {img.shape}")
    h, w = img.shape[:2]
    if h % PATCH or w % PATCH:
        raise ShapeError(f"raster sides must be divisible by {PATCH}, got {h}x{w}")
    px = img.astype(params.w_stage1.dtype) / 255.0
    require_finite("embed_image input", px)

    p0 = px.reshape(h // 4, 4, w // 4, 4, 3).transpose(0, 2, 1, 3, 4).reshape(h // 4, w // 4, 48)
    g1 = p0 @ params.w_stage1 + params.b_stage1
    m1 = _merge_2x2(g1)
    g2 = m1 @ params.w_stage2 + params.b_stage2
    m2 = _merge_2x2(g2)
    g3 = m2 @ params.w_stage3 + params.b_stage3
    tokens = g3.reshape(-1, params.width)
    if positions is not None:
        if positions.shape != tokens.shape:
            raise ShapeError(f"positions shape {positions.shape} does not match tokens {tokens.shape}")
        tokens = tokens + positions
    return tokens, (p0, m1, m2, (h, w))


def embed_image_backward(cache, params: PatchEmbedParams, d_tokens: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for a cached embed_image call."""
    p0, m1, m2, (h, w) = cache
    d = params.width
    d_g3 = d_tokens.reshape(h // PATCH, w // PATCH, d)

    flat_m2 = m2.reshape(-1, m2.shape[-1])
    flat_d3 = d_g3.reshape(-1, d)
    grads = {
        "w_stage3": flat_m2.T @ flat_d3,
        "b_stage3": flat_d3.sum(axis=0),
    }
    d_g2 = _unmerge_2x2(d_g3 @ params.w_stage3.T)

    flat_m1 = m1.reshape(-1, m1.shape[-1])
    flat_d2 = d_g2.reshape(-1, d_g2.shape[-1])
    grads["w_stage2"] = flat_m1.T @ flat_d2
    grads["b_stage2"] = flat_d2.sum(axis=0)
    d_g1 = _unmerge_2x2(d_g2 @ params.w_stage2.T)

    flat_p0 = p0.reshape(-1, 48)
    flat_d1 = d_g1.reshape(-1, d_g1.shape[-1])
    grads["w_stage1"] = flat_p0.T @ flat_d1
    grads["b_stage1"] = flat_d1.sum(axis=0)
    return grads
