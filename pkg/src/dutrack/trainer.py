"""Two-stage toy training with AdamW.

Stage one is vision-only (the language slot carries [CLS] plus padding) and
samples nearby frame pairs. Stage two feeds generated descriptions, samples
far-apart pairs so the initial template goes stale, and attaches dynamic
patches captured from a recent frame, which is what teaches the encoder to
lean on the updated references.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .boxes import Box
from .embedding import PATCH, Vocabulary, tokenize_text
from .head import HeadOutputs
from .language_update import generate_description
from .model import (
    LossWeights,
    ModelConfig,
    TrackerParams,
    TrainSample,
    flatten_params,
    loss_targets,
    run_model,
    training_loss_and_grads,
)
from .sequences import Sequence
from .template_capture import cls_to_search_attention, index_to_patch_box, topk_indices
from .tracker import crop_search_region

log = logging.getLogger(__name__)

STAGE_VISION = "vision-only"
STAGE_VISION_LANGUAGE = "vision-language"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    samples_per_epoch: int = 200
    batch_size: int = 8
    center_weight: float = 1.0
    reg_weight: float = 1.0
    attn_weight: float = 1.0
    seed: int = 0
    stage: str = STAGE_VISION
    topk: int = 3
    # sampling knobs
    jitter_center: float = 0.4   # fraction of sqrt(w*h)
    jitter_scale: float = 0.25   # log2 extent perturbation
    near_gap: int = 8            # stage-1 max |i - j|
    caption_lag_max: int = 3     # stage-2 capture/caption frame lag

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("rates must be non-negative and eps positive")
        if self.stage not in (STAGE_VISION, STAGE_VISION_LANGUAGE):
            raise ValueError(f"unknown stage '{self.stage}'")


class NonFiniteGradientError(RuntimeError):
    pass


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    config: TrainConfig,
    step_index: int,
) -> None:
    """Decoupled-weight-decay AdamW with bias-corrected moments, in place."""
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    bc1 = 1.0 - config.beta1 ** step_index
    bc2 = 1.0 - config.beta2 ** step_index
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for '{name}' at step {step_index}")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        p *= 1.0 - config.lr * config.weight_decay
        p -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


# ---------------------------------------------------------------------------
# loss (public surface; the fused path lives in model.training_loss_and_grads)


def tracking_loss(outputs: HeadOutputs, gt: Box, crop_size: int, center_weight: float = 1.0, reg_weight: float = 1.0):
    """BCE on the score map against the one-hot center cell plus L1 on the
    offset/size channels at that cell. Returns (loss, grads w.r.t. the maps)."""
    g = outputs.grid
    n_cells = g * g
    r, c, off_t, size_t = loss_targets(gt, crop_size)
    cell = r * g + c

    score = outputs.score.reshape(-1)
    y = np.zeros(n_cells)
    y[cell] = 1.0
    s = np.clip(score, 1e-12, 1.0 - 1e-12)
    bce = -float(np.mean(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)))
    d_score = (center_weight * (-y / s + (1.0 - y) / (1.0 - s)) / n_cells).reshape(g, g)

    off_p = outputs.offset[r, c]
    size_p = outputs.size[r, c]
    l1 = float(np.abs(off_p - off_t).sum() + np.abs(size_p - size_t).sum())
    d_offset = np.zeros_like(outputs.offset)
    d_size = np.zeros_like(outputs.size)
    d_offset[r, c] = reg_weight * np.sign(off_p - off_t)
    d_size[r, c] = reg_weight * np.sign(size_p - size_t)

    loss = center_weight * bce + reg_weight * l1
    return loss, {"score": d_score, "offset": d_offset, "size": d_size}


# ---------------------------------------------------------------------------
# sampling


def _jittered_crop(rng, frame, gt: Box, config: TrainConfig, model_cfg: ModelConfig):
    """Search crop around a perturbed ground truth, as the tracker would see it."""
    span = math.sqrt(gt.w * gt.h)
    for _ in range(8):
        dx, dy = rng.uniform(-config.jitter_center, config.jitter_center, 2) * span
        s = 2.0 ** rng.uniform(-config.jitter_scale, config.jitter_scale)
        cx, cy = gt.center
        base = Box(cx + dx - gt.w * s / 2.0, cy + dy - gt.h * s / 2.0, gt.w * s, gt.h * s)
        crop, mapping = crop_search_region(frame, base, 4.0, model_cfg.search_size)
        gt_crop = mapping.box_to_crop(gt)
        size = model_cfg.search_size
        if 0 <= gt_crop.x and 0 <= gt_crop.y and gt_crop.x + gt_crop.w <= size and gt_crop.y + gt_crop.h <= size:
            return crop, gt_crop
    # fall back to a centered crop, which always contains the box
    crop, mapping = crop_search_region(frame, gt, 4.0, model_cfg.search_size)
    return crop, mapping.box_to_crop(gt)


def _capture_patches(params, model_cfg, config, lang_ids, tmpl_content_crop, seq, frame_idx, rng):
    """Run the model on a capture frame without gradients and cut out the
    top-k patches, mirroring what the tracker appends at inference time."""
    frame = seq.frames[frame_idx]
    gt = seq.boxes[frame_idx]
    crop, _ = crop_search_region(frame, gt, 4.0, model_cfg.search_size)
    enc_out, _ = run_model(
        params, model_cfg, lang_ids, tmpl_content_crop,
        np.zeros((0, model_cfg.width)), crop,
    )
    scores = cls_to_search_attention(enc_out.final_attention)
    patches = []
    for idx in topk_indices(scores.scores, config.topk):
        box = index_to_patch_box(int(idx), model_cfg.search_size)
        patches.append(crop[int(box.y) : int(box.y) + PATCH, int(box.x) : int(box.x) + PATCH])
    return patches


def draw_sample(
    rng: np.random.Generator,
    dataset: list[Sequence],
    config: TrainConfig,
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    params: TrackerParams,
) -> TrainSample:
    seq = dataset[int(rng.integers(len(dataset)))]
    n = len(seq)
    if config.stage == STAGE_VISION:
        i = int(rng.integers(n))
        j = int(np.clip(i + rng.integers(-config.near_gap, config.near_gap + 1), 0, n - 1))
        lang_ids = tokenize_text("", vocab, model_cfg.n_lang)
        caption_frame = None
    else:
        i = 0
        j = int(rng.integers(n // 3, n)) if n >= 3 else n - 1
        caption_frame = max(0, j - int(rng.integers(1, config.caption_lag_max + 1)))
        caption = generate_description(seq.frames[caption_frame], seq.boxes[caption_frame], seq.category)
        lang_ids = tokenize_text(caption, vocab, model_cfg.n_lang)

    tmpl_crop, _ = crop_search_region(seq.frames[i], seq.boxes[i], 2.0, model_cfg.template_size)
    search_crop, gt_crop = _jittered_crop(rng, seq.frames[j], seq.boxes[j], config, model_cfg)

    dyn_patches: list[np.ndarray] = []
    if config.stage == STAGE_VISION_LANGUAGE and config.topk > 0:
        from .embedding import embed_image

        tmpl_content = embed_image(tmpl_crop, params.embed)
        dyn_patches = _capture_patches(
            params, model_cfg, config, lang_ids, tmpl_content, seq, caption_frame, rng
        )

    return TrainSample(
        tmpl_pixels=tmpl_crop,
        search_pixels=search_crop,
        dyn_patches=dyn_patches,
        lang_ids=lang_ids,
        gt_crop=gt_crop,
    )


# ---------------------------------------------------------------------------
# the stage driver


def train_stage(
    dataset: list[Sequence],
    config: TrainConfig,
    model_cfg: ModelConfig,
    params: TrackerParams,
    vocab: Vocabulary,
) -> list[float]:
    """Run one stage over the dataset; returns the per-epoch mean loss curve.

    Deterministic for a fixed config: the sample stream derives from
    config.seed and the stage name.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    stage_salt = 0 if config.stage == STAGE_VISION else 104729
    rng = np.random.default_rng(config.seed + stage_salt)
    flat = flatten_params(params)
    opt = AdamWState.for_params(flat)
    weights = LossWeights(
        center=config.center_weight,
        regression=config.reg_weight,
        attention=config.attn_weight,
    )

    curve: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        total = 0.0
        seen = 0
        while seen < config.samples_per_epoch:
            batch = min(config.batch_size, config.samples_per_epoch - seen)
            acc: dict[str, np.ndarray] | None = None
            for _ in range(batch):
                sample = draw_sample(rng, dataset, config, model_cfg, vocab, params)
                loss, grads, _ = training_loss_and_grads(params, model_cfg, sample, weights)
                total += loss
                if acc is None:
                    acc = grads
                else:
                    for name in acc:
                        acc[name] += grads[name]
            for name in acc:
                acc[name] /= batch
            step += 1
            adamw_step(flat, acc, opt, config, step)
            seen += batch
        curve.append(total / config.samples_per_epoch)
        log.info("stage=%s epoch=%d loss=%.5f", config.stage, epoch, curve[-1])
    return curve


def train_two_stages(
    dataset: list[Sequence],
    stage1: TrainConfig,
    stage2: TrainConfig,
    model_cfg: ModelConfig,
    params: TrackerParams,
    vocab: Vocabulary,
) -> dict[str, list[float]]:
    curves = {"stage1": train_stage(dataset, replace(stage1, stage=STAGE_VISION), model_cfg, params, vocab)}
    if stage2.epochs > 0:
        curves["stage2"] = train_stage(
            dataset, replace(stage2, stage=STAGE_VISION_LANGUAGE), model_cfg, params, vocab
        )
    return curves
