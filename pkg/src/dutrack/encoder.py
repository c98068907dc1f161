"""Unified encoder over the concatenated [language; template; search] tokens.

Each block computes, in order:

    feat, attn = MHSA(x)
    f = x + LN(scale_a * feat)
    out = f + LN(scale_m * MLP(f))

and the output carries the last block's per-head attention probabilities so
the capture module can read the language-to-search map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    MhsaParams,
    ShapeError,
    gelu,
    gelu_backward,
    layer_norm_backward,
    layer_norm_cached,
    mhsa_backward,
    mhsa_forward_cached,
)


class EncodeError(ValueError):
    pass


# Block-internal layer-norm eps. Deliberately larger than the kernel default:
# the learnable branch scales feed layer norm, which is scale-invariant up to
# eps, so their gradients are proportional to eps and would otherwise drown
# in float noise.
BLOCK_LN_EPS = 1e-3


@dataclass(frozen=True)
class SegmentLayout:
    """Row boundaries of the language / template / search segments."""

    n_lang: int
    n_tmpl: int
    n_search: int
    width: int

    def __post_init__(self):
        if min(self.n_lang, self.n_tmpl, self.n_search) < 0 or self.width < 1:
            raise ShapeError("segment sizes must be non-negative and width positive")

    @property
    def total(self) -> int:
        return self.n_lang + self.n_tmpl + self.n_search

    @property
    def lang_slice(self) -> slice:
        return slice(0, self.n_lang)

    @property
    def tmpl_slice(self) -> slice:
        return slice(self.n_lang, self.n_lang + self.n_tmpl)

    @property
    def search_slice(self) -> slice:
        return slice(self.n_lang + self.n_tmpl, self.total)


@dataclass
class AttentionRecord:
    """Per-head attention probabilities of one block, with segment layout."""

    probs: np.ndarray  # (heads, N, N)
    layout: SegmentLayout

    def validate(self, tol: float = 1e-6) -> None:
        if self.probs.ndim != 3 or self.probs.shape[1] != self.probs.shape[2]:
            raise ShapeError(f"attention tensor must be (heads, N, N), got {self.probs.shape}")
        if self.probs.shape[1] != self.layout.total:
            raise ShapeError("attention size does not match layout")
        sums = self.probs.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=tol):
            raise ValueError("attention rows do not sum to 1")


@dataclass
class EncoderBlockParams:
    attn: MhsaParams
    w_hidden: np.ndarray  # (d, 4d)
    b_hidden: np.ndarray
    w_out: np.ndarray     # (4d, d)
    b_out: np.ndarray
    norm1_gain: np.ndarray
    norm1_bias: np.ndarray
    norm2_gain: np.ndarray
    norm2_bias: np.ndarray
    attn_scale: np.ndarray  # learnable scalar, shape ()
    mlp_scale: np.ndarray   # learnable scalar, shape ()

    @property
    def width(self) -> int:
        return self.attn.model_dim

    @classmethod
    def create(cls, d: int, num_heads: int, rng: np.random.Generator, dtype=np.float64) -> "EncoderBlockParams":
        hidden = 4 * d
        return cls(
            attn=MhsaParams.create(d, num_heads, rng, dtype=dtype),
            w_hidden=(rng.standard_normal((d, hidden)) / np.sqrt(d)).astype(dtype),
            b_hidden=np.zeros(hidden, dtype=dtype),
            w_out=(rng.standard_normal((hidden, d)) / np.sqrt(hidden)).astype(dtype),
            b_out=np.zeros(d, dtype=dtype),
            norm1_gain=np.ones(d, dtype=dtype),
            norm1_bias=np.zeros(d, dtype=dtype),
            norm2_gain=np.ones(d, dtype=dtype),
            norm2_bias=np.zeros(d, dtype=dtype),
            attn_scale=np.array(1.0, dtype=dtype),
            mlp_scale=np.array(1.0, dtype=dtype),
        )


@dataclass
class EncodeOutput:
    lang: np.ndarray
    tmpl: np.ndarray
    search: np.ndarray
    final_attention: AttentionRecord


def concat_layout(lang: np.ndarray, tmpl: np.ndarray, search: np.ndarray):
    """Stack the three segments and record their boundaries."""
    parts = [np.atleast_2d(np.asarray(p)) for p in (lang, tmpl, search)]
    if len({p.shape[1] for p in parts}) != 1:
        raise ShapeError(f"segment widths differ: {[p.shape for p in parts]}")
    width = parts[0].shape[1]
    tokens = np.concatenate(parts, axis=0)
    layout = SegmentLayout(parts[0].shape[0], parts[1].shape[0], parts[2].shape[0], width)
    return tokens, layout


def _block_forward(x: np.ndarray, p: EncoderBlockParams, keep_cache: bool):
    feat, attn, mcache = mhsa_forward_cached(x, p.attn)
    a = float(p.attn_scale) * feat
    n1, ln1_cache = layer_norm_cached(a, p.norm1_gain, p.norm1_bias, BLOCK_LN_EPS)
    f = x + n1
    h_pre = f @ p.w_hidden + p.b_hidden
    h = gelu(h_pre)
    m = h @ p.w_out + p.b_out
    c = float(p.mlp_scale) * m
    n2, ln2_cache = layer_norm_cached(c, p.norm2_gain, p.norm2_bias, BLOCK_LN_EPS)
    out = f + n2
    cache = (mcache, feat, ln1_cache, f, h_pre, h, m, ln2_cache) if keep_cache else None
    return out, attn, cache


def _block_backward(p: EncoderBlockParams, cache, d_out: np.ndarray, d_attn: np.ndarray | None = None):
    mcache, feat, ln1_cache, f, h_pre, h, m, ln2_cache = cache

    d_f = d_out.copy()
    d_c, d_g2, d_b2 = layer_norm_backward(ln2_cache, d_out)
    d_mlp_scale = np.array((d_c * m).sum())
    d_m = float(p.mlp_scale) * d_c
    d_h = d_m @ p.w_out.T
    d_hpre = gelu_backward(h_pre, d_h)
    grads = {
        "w_out": h.T @ d_m,
        "b_out": d_m.sum(axis=0),
        "w_hidden": f.T @ d_hpre,
        "b_hidden": d_hpre.sum(axis=0),
        "norm2_gain": d_g2,
        "norm2_bias": d_b2,
        "mlp_scale": d_mlp_scale,
    }
    d_f += d_hpre @ p.w_hidden.T

    d_a, d_g1, d_b1 = layer_norm_backward(ln1_cache, d_f)
    grads["norm1_gain"] = d_g1
    grads["norm1_bias"] = d_b1
    grads["attn_scale"] = np.array((d_a * feat).sum())
    d_feat = float(p.attn_scale) * d_a
    d_x_attn, attn_grads = mhsa_backward(mcache, p.attn, d_feat, d_attn)
    for name, g in attn_grads.items():
        grads[f"attn.{name}"] = g
    d_x = d_f + d_x_attn
    return d_x, grads


def encode(tokens: np.ndarray, layout: SegmentLayout, blocks: list[EncoderBlockParams]) -> EncodeOutput:
    out, _ = encode_cached(tokens, layout, blocks, keep_cache=False)
    return out


def encode_cached(tokens, layout, blocks, keep_cache: bool = True):
    tokens = np.asarray(tokens)
    if not blocks:
        raise ValueError("encode requires at least one block")
    if tokens.shape != (layout.total, layout.width):
        raise ShapeError(f"tokens {tokens.shape} do not match layout ({layout.total},{layout.width})")

    x = tokens
    attn = None
    caches = []
    for i, block in enumerate(blocks):
        x, attn, cache = _block_forward(x, block, keep_cache)
        if not np.all(np.isfinite(x)):
            raise EncodeError(f"non-finite activations after block {i}")
        caches.append(cache)
    record = AttentionRecord(probs=attn, layout=layout)
    out = EncodeOutput(
        lang=x[layout.lang_slice],
        tmpl=x[layout.tmpl_slice],
        search=x[layout.search_slice],
        final_attention=record,
    )
    return out, caches


def encode_backward(blocks, caches, d_out: np.ndarray, d_final_attn: np.ndarray | None = None):
    """Backward through the block stack.

    `d_out` is the gradient on the stacked output tokens; `d_final_attn`
    lands on the last block's attention probabilities. Returns the gradient
    on the input tokens plus one grads dict per block.
    """
    d_x = d_out
    block_grads: list[dict] = [{}] * len(blocks)
    for i in range(len(blocks) - 1, -1, -1):
        d_attn = d_final_attn if i == len(blocks) - 1 else None
        d_x, grads = _block_backward(blocks[i], caches[i], d_x, d_attn)
        block_grads[i] = grads
    return d_x, block_grads
