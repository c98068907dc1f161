"""Parameter container and the full forward/backward graph.

Gathers the patch embedding, text embedding, positional tables, encoder
blocks and head into one flat name -> array mapping shared by the optimizer
and the checkpoint format, and implements the training loss with analytic
gradients for every parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .boxes import Box
from .embedding import (
    PATCH,
    PatchEmbedParams,
    embed_image_backward,
    embed_image_cached,
    embed_text,
)
from .encoder import (
    EncodeOutput,
    EncoderBlockParams,
    concat_layout,
    encode,
    encode_backward,
    encode_cached,
)
from .head import HeadOutputs, HeadParams, head_backward, head_forward, head_forward_cached
from .kernels import ShapeError


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    heads: int = 4
    depth: int = 4
    n_lang: int = 16
    template_size: int = 64
    search_size: int = 128
    max_dynamic: int = 8

    def __post_init__(self):
        if self.width % self.heads or self.width % 4:
            raise ValueError("width must be divisible by the head count and by 4")
        if self.template_size % PATCH or self.search_size % PATCH:
            raise ValueError(f"crop sizes must be divisible by {PATCH}")

    @property
    def n_tmpl_init(self) -> int:
        return (self.template_size // PATCH) ** 2

    @property
    def n_search(self) -> int:
        return (self.search_size // PATCH) ** 2

    @property
    def grid(self) -> int:
        return self.search_size // PATCH


@dataclass
class TrackerParams:
    embed: PatchEmbedParams
    text_table: np.ndarray
    pos_lang: np.ndarray
    pos_tmpl: np.ndarray    # initial-template rows first, dynamic rows after
    pos_search: np.ndarray
    blocks: list[EncoderBlockParams]
    head: HeadParams


def init_params(cfg: ModelConfig, vocab_size: int, rng: np.random.Generator, dtype=np.float64) -> TrackerParams:
    d = cfg.width
    def table(rows):
        return (0.2 * rng.standard_normal((rows, d))).astype(dtype)
    return TrackerParams(
        embed=PatchEmbedParams.create(d, rng, dtype=dtype),
        text_table=table(vocab_size),
        pos_lang=table(cfg.n_lang),
        pos_tmpl=table(cfg.n_tmpl_init + cfg.max_dynamic),
        pos_search=table(cfg.n_search),
        blocks=[EncoderBlockParams.create(d, cfg.heads, rng, dtype=dtype) for _ in range(cfg.depth)],
        head=HeadParams.create(d, rng, dtype=dtype),
    )


_EMBED_FIELDS = ("w_stage1", "b_stage1", "w_stage2", "b_stage2", "w_stage3", "b_stage3")
_ATTN_FIELDS = ("wq", "bq", "wk", "wv", "bv", "wo", "bo")
_BLOCK_FIELDS = (
    "w_hidden", "b_hidden", "w_out", "b_out",
    "norm1_gain", "norm1_bias", "norm2_gain", "norm2_bias",
    "attn_scale", "mlp_scale",
)
_HEAD_FIELDS = ("w_score", "b_score", "w_offset", "b_offset", "w_size", "b_size")


def flatten_params(params: TrackerParams) -> dict[str, np.ndarray]:
    """Stable name -> array view of every trainable parameter."""
    flat: dict[str, np.ndarray] = {}
    for name in _EMBED_FIELDS:
        flat[f"embed.{name}"] = getattr(params.embed, name)
    flat["text_table"] = params.text_table
    flat["pos_lang"] = params.pos_lang
    flat["pos_tmpl"] = params.pos_tmpl
    flat["pos_search"] = params.pos_search
    for i, block in enumerate(params.blocks):
        for name in _ATTN_FIELDS:
            flat[f"blocks.{i}.attn.{name}"] = getattr(block.attn, name)
        for name in _BLOCK_FIELDS:
            flat[f"blocks.{i}.{name}"] = getattr(block, name)
    for name in _HEAD_FIELDS:
        flat[f"head.{name}"] = getattr(params.head, name)
    return flat


def save_params(path, params: TrackerParams) -> None:
    checkpoint.save_arrays(path, flatten_params(params))


def load_params(path, cfg: ModelConfig, vocab_size: int, dtype=np.float64) -> TrackerParams:
    arrays = checkpoint.load_arrays(path)
    rng = np.random.default_rng(0)
    params = init_params(cfg, vocab_size, rng, dtype=dtype)
    flat = flatten_params(params)
    missing = [k for k in flat if k not in arrays]
    extra = [k for k in arrays if k not in flat]
    if missing or extra:
        raise checkpoint.CheckpointError(
            f"checkpoint does not match the configured model "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, arr in flat.items():
        loaded = arrays[name]
        if loaded.shape != arr.shape:
            raise checkpoint.CheckpointError(
                f"array '{name}' has shape {loaded.shape}, expected {arr.shape}"
            )
        arr[...] = loaded.astype(arr.dtype)
    return params


# ---------------------------------------------------------------------------
# token assembly


def assemble_tokens(
    params: TrackerParams,
    cfg: ModelConfig,
    lang_ids: np.ndarray,
    tmpl_content: np.ndarray,
    dyn_content: np.ndarray,
    search_content: np.ndarray,
):
    """Add per-segment positional embeddings and stack [L; T_init+T_dyn; S].

    Dynamic rows use the template table entries past the initial positions.
    """
    n_init = cfg.n_tmpl_init
    k = dyn_content.shape[0]
    if k > cfg.max_dynamic:
        raise ShapeError(f"{k} dynamic tokens exceed the configured maximum {cfg.max_dynamic}")
    if tmpl_content.shape[0] != n_init:
        raise ShapeError(f"expected {n_init} initial template tokens, got {tmpl_content.shape[0]}")
    if search_content.shape[0] != cfg.n_search:
        raise ShapeError(f"expected {cfg.n_search} search tokens, got {search_content.shape[0]}")
    lang = embed_text(lang_ids, params.text_table, params.pos_lang)
    tmpl = tmpl_content + params.pos_tmpl[:n_init]
    if k:
        tmpl = np.concatenate([tmpl, dyn_content + params.pos_tmpl[n_init : n_init + k]], axis=0)
    search = search_content + params.pos_search
    return concat_layout(lang, tmpl, search)


def run_model(
    params: TrackerParams,
    cfg: ModelConfig,
    lang_ids: np.ndarray,
    tmpl_content: np.ndarray,
    dyn_content: np.ndarray,
    search_crop: np.ndarray,
) -> tuple[EncodeOutput, HeadOutputs]:
    """Inference forward: embed the crop, encode, run the head."""
    search_content, _ = embed_image_cached(search_crop, params.embed)
    tokens, layout = assemble_tokens(params, cfg, lang_ids, tmpl_content, dyn_content, search_content)
    out = encode(tokens, layout, params.blocks)
    outputs = head_forward(out.search, params.head)
    return out, outputs


# ---------------------------------------------------------------------------
# training graph


@dataclass
class TrainSample:
    tmpl_pixels: np.ndarray            # (T, T, 3)
    search_pixels: np.ndarray          # (S, S, 3)
    dyn_patches: list[np.ndarray]      # k patches of (16, 16, 3)
    lang_ids: np.ndarray               # (n_lang,)
    gt_crop: Box                       # ground truth in search-crop coordinates


@dataclass
class LossWeights:
    center: float = 1.0
    regression: float = 1.0
    attention: float = 1.0


def loss_targets(gt: Box, crop_size: int):
    """Target cell, in-cell offsets and normalized sizes for a crop-space box."""
    if gt.x < 0 or gt.y < 0 or gt.x + gt.w > crop_size or gt.y + gt.h > crop_size:
        raise ValueError(f"ground-truth box {gt.as_tuple()} lies outside the {crop_size} crop")
    g = crop_size // PATCH
    cx, cy = gt.center
    c = min(int(cx // PATCH), g - 1)
    r = min(int(cy // PATCH), g - 1)
    off = np.array([cx / PATCH - c, cy / PATCH - r])
    size = np.array([gt.w / crop_size, gt.h / crop_size])
    return r, c, off, size


def training_loss_and_grads(
    params: TrackerParams,
    cfg: ModelConfig,
    sample: TrainSample,
    weights: LossWeights = LossWeights(),
):
    """One-sample loss plus analytic gradients for every parameter.

    Loss = center_weight * BCE(score map, one-hot target cell)
         + regression_weight * L1(offset, size at the target cell)
         + attention_weight * (-log of the [CLS]->target-cell attention mass).
    """
    tmpl_content, cache_t = embed_image_cached(sample.tmpl_pixels, params.embed)
    search_content, cache_s = embed_image_cached(sample.search_pixels, params.embed)
    dyn_rows = []
    dyn_caches = []
    for patch in sample.dyn_patches:
        row, cache = embed_image_cached(patch, params.embed)
        dyn_rows.append(row[0])
        dyn_caches.append(cache)
    dyn_content = np.stack(dyn_rows) if dyn_rows else np.zeros((0, cfg.width))

    tokens, layout = assemble_tokens(params, cfg, sample.lang_ids, tmpl_content, dyn_content, search_content)
    enc_out, enc_caches = encode_cached(tokens, layout, params.blocks)
    outputs, head_cache = head_forward_cached(enc_out.search, params.head)

    g = cfg.grid
    n_cells = g * g
    r, c, off_t, size_t = loss_targets(sample.gt_crop, cfg.search_size)
    cell = r * g + c

    # BCE on the score map against the one-hot target cell; gradients are
    # taken w.r.t. the raw logits so confident scores stay stable.
    score = outputs.score.reshape(-1)
    y = np.zeros(n_cells)
    y[cell] = 1.0
    s_clip = np.clip(score, 1e-12, 1.0 - 1e-12)
    bce = -float(np.mean(y * np.log(s_clip) + (1.0 - y) * np.log(1.0 - s_clip)))
    d_raw_score = (weights.center * (score - y) / n_cells).reshape(-1, 1)

    off_p = outputs.offset[r, c]
    size_p = outputs.size[r, c]
    l1 = float(np.abs(off_p - off_t).sum() + np.abs(size_p - size_t).sum())
    d_raw_offset = np.zeros((n_cells, 2))
    d_raw_size = np.zeros((n_cells, 2))
    d_raw_offset[cell] = weights.regression * np.sign(off_p - off_t) * off_p * (1.0 - off_p)
    d_raw_size[cell] = weights.regression * np.sign(size_p - size_t) * size_p * (1.0 - size_p)

    d_f_search, head_grads = head_backward(head_cache, params.head, d_raw_score, d_raw_offset, d_raw_size)

    # Attention supervision: the head-averaged [CLS] mass on the target cell.
    probs = enc_out.final_attention.probs
    n_heads = probs.shape[0]
    col = layout.n_lang + layout.n_tmpl + cell
    attn_mass = float(probs[:, 0, col].mean())
    d_final_attn = None
    attn_loss = 0.0
    if weights.attention:
        attn_loss = -math.log(attn_mass + 1e-9)
        d_final_attn = np.zeros_like(probs)
        d_final_attn[:, 0, col] = -weights.attention / (attn_mass + 1e-9) / n_heads

    d_tokens_out = np.zeros_like(tokens)
    d_tokens_out[layout.search_slice] = d_f_search
    d_tokens_in, block_grads = encode_backward(params.blocks, enc_caches, d_tokens_out, d_final_attn)

    grads: dict[str, np.ndarray] = {}
    for i, bg in enumerate(block_grads):
        for name, val in bg.items():
            grads[f"blocks.{i}.{name}"] = val
    for name, val in head_grads.items():
        grads[f"head.{name}"] = val

    d_lang = d_tokens_in[layout.lang_slice]
    d_tmpl = d_tokens_in[layout.tmpl_slice]
    d_search = d_tokens_in[layout.search_slice]

    grads["pos_lang"] = d_lang.copy()
    grads["pos_search"] = d_search.copy()
    d_table = np.zeros_like(params.text_table)
    np.add.at(d_table, sample.lang_ids, d_lang)
    grads["text_table"] = d_table

    n_init = cfg.n_tmpl_init
    k = dyn_content.shape[0]
    d_pos_tmpl = np.zeros_like(params.pos_tmpl)
    d_pos_tmpl[:n_init] = d_tmpl[:n_init]
    d_pos_tmpl[n_init : n_init + k] = d_tmpl[n_init:]
    grads["pos_tmpl"] = d_pos_tmpl

    embed_grads = embed_image_backward(cache_t, params.embed, d_tmpl[:n_init])
    for name, val in embed_image_backward(cache_s, params.embed, d_search).items():
        embed_grads[name] += val
    for i, cache in enumerate(dyn_caches):
        for name, val in embed_image_backward(cache, params.embed, d_tmpl[n_init + i : n_init + i + 1]).items():
            embed_grads[name] += val
    for name, val in embed_grads.items():
        grads[f"embed.{name}"] = val

    loss = weights.center * bce + weights.regression * l1 + weights.attention * attn_loss
    stats = {"bce": bce, "l1": l1, "attn": attn_loss, "attn_mass": attn_mass}
    return loss, grads, stats
