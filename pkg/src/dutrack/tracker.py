"""Per-frame inference pipeline: crop, encode, decode, capture, update."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box
from .embedding import PATCH, Vocabulary, embed_image, tokenize_text
from .head import decode_box
from .language_update import (
    ObjectStamp,
    UpdateDeltas,
    UpdatePolicy,
    RuleBasedCaptioner,
    commit_update,
    compute_deltas,
    initial_stamp,
    should_update,
)
from .model import ModelConfig, TrackerParams, run_model
from .template_capture import (
    DynamicTemplate,
    capture_dynamic_template,
    cls_to_search_attention,
    empty_dynamic_template,
    topk_indices,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CropMapping:
    """Affine crop -> frame mapping (uniform scale plus offset)."""

    x0: float
    y0: float
    scale: float

    def box_to_frame(self, b: Box) -> Box:
        return Box(self.x0 + b.x * self.scale, self.y0 + b.y * self.scale, b.w * self.scale, b.h * self.scale)

    def box_to_crop(self, b: Box) -> Box:
        return Box((b.x - self.x0) / self.scale, (b.y - self.y0) / self.scale, b.w / self.scale, b.h / self.scale)


def crop_search_region(frame: np.ndarray, prev: Box, factor: float, out_size: int):
    """Square crop of side factor*sqrt(w*h) centered on `prev`, resampled
    bilinearly to out_size; out-of-frame area takes the frame's mean color.

    Returns (crop, mapping); the mapping inverts exactly on box coordinates.
    """
    if factor <= 1.0:
        raise ValueError("crop factor must exceed 1")
    if out_size % PATCH:
        raise ValueError(f"output size must be divisible by {PATCH}")
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    if prev.w <= 0 or prev.h <= 0:
        raise ValueError("previous box is degenerate")

    side = factor * float(np.sqrt(prev.w * prev.h))
    cx, cy = prev.center
    x0 = cx - side / 2.0
    y0 = cy - side / 2.0
    scale = side / out_size
    mapping = CropMapping(x0=x0, y0=y0, scale=scale)

    # pixel-center sampling coordinates in frame space
    coords = (np.arange(out_size) + 0.5) * scale - 0.5
    xs = x0 + coords
    ys = y0 + coords
    fill = frame.reshape(-1, 3).mean(axis=0)

    x_lo = np.floor(xs).astype(np.int64)
    y_lo = np.floor(ys).astype(np.int64)
    fx = xs - x_lo
    fy = ys - y_lo

    def gather(yy, xx):
        """Pixel lookup with constant (mean color) padding."""
        valid = (yy >= 0) & (yy < h)
        vx = (xx >= 0) & (xx < w)
        out = np.empty((out_size, out_size, 3), dtype=np.float64)
        out[:] = fill
        yyc = np.clip(yy, 0, h - 1)
        xxc = np.clip(xx, 0, w - 1)
        block = frame[yyc[:, None], xxc[None, :]]
        mask = valid[:, None] & vx[None, :]
        out[mask] = block[mask]
        return out

    tl = gather(y_lo, x_lo)
    tr = gather(y_lo, x_lo + 1)
    bl = gather(y_lo + 1, x_lo)
    br = gather(y_lo + 1, x_lo + 1)
    wx = fx[None, :, None]
    wy = fy[:, None, None]
    crop = (1 - wy) * ((1 - wx) * tl + wx * tr) + wy * ((1 - wx) * bl + wx * br)
    return crop, mapping


@dataclass
class TrackConfig:
    """Inference-time knobs (model geometry lives in ModelConfig)."""

    topk: int = 3
    window_weight: float = 0.3
    search_factor: float = 4.0
    template_factor: float = 2.0
    policy: UpdatePolicy = field(default_factory=UpdatePolicy)
    gate_capture_by_policy: bool = False
    displacement_from_corners: bool = False


@dataclass
class TrackerState:
    params: TrackerParams
    model_cfg: ModelConfig
    cfg: TrackConfig
    vocab: Vocabulary
    captioner: RuleBasedCaptioner
    category: str
    lang_ids: np.ndarray
    tmpl_content: np.ndarray
    dynamic: DynamicTemplate
    stamp: ObjectStamp
    prev_box: Box
    frame_index: int = 0


@dataclass
class FrameDiagnostics:
    frame_index: int
    deltas: UpdateDeltas
    updated: bool
    description: str
    capture_boxes: list[tuple[int, Box, float]]  # (patch index, crop-space box, score)
    token_counts: tuple[int, int, int]           # (n_lang, n_tmpl, n_search)


def init_tracker(
    frame0: np.ndarray,
    gt_box: Box,
    description: str,
    category: str,
    params: TrackerParams,
    model_cfg: ModelConfig,
    cfg: TrackConfig,
    vocab: Vocabulary,
    captioner=None,
) -> TrackerState:
    """Build the initial state from the first frame's annotation. An empty
    description is generated, which lets vision-only data run unchanged."""
    frame0 = np.asarray(frame0)
    h, w = frame0.shape[:2]
    if gt_box.x < 0 or gt_box.y < 0 or gt_box.x + gt_box.w > w or gt_box.y + gt_box.h > h:
        raise ValueError(f"initial box {gt_box.as_tuple()} lies outside the {w}x{h} frame")
    if cfg.topk > model_cfg.max_dynamic:
        raise ValueError(f"topk={cfg.topk} exceeds the model's dynamic capacity {model_cfg.max_dynamic}")
    captioner = captioner or RuleBasedCaptioner()
    if not description:
        description = captioner.describe(frame0, gt_box, category)

    tmpl_crop, _ = crop_search_region(frame0, gt_box, cfg.template_factor, model_cfg.template_size)
    tmpl_content = embed_image(tmpl_crop, params.embed)
    lang_ids = tokenize_text(description, vocab, model_cfg.n_lang)
    stamp = initial_stamp(frame0, gt_box, description, category)
    return TrackerState(
        params=params,
        model_cfg=model_cfg,
        cfg=cfg,
        vocab=vocab,
        captioner=captioner,
        category=category,
        lang_ids=lang_ids,
        tmpl_content=tmpl_content,
        dynamic=empty_dynamic_template(model_cfg.width),
        stamp=stamp,
        prev_box=gt_box,
        frame_index=0,
    )


def _clamp_to_frame(box: Box, w: int, h: int) -> Box:
    bw = min(box.w, float(w))
    bh = min(box.h, float(h))
    x = min(max(box.x, 0.0), w - bw)
    y = min(max(box.y, 0.0), h - bh)
    return Box(x, y, bw, bh)


def track_frame(state: TrackerState, frame: np.ndarray) -> tuple[Box, FrameDiagnostics]:
    """Advance one frame: locate the target, refresh the dynamic template for
    the next frame, and run the language-update policy. Mutates `state`."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    if h < PATCH or w < PATCH:
        raise ValueError(f"frame {w}x{h} is smaller than one {PATCH}x{PATCH} patch")
    cfg = state.cfg
    mcfg = state.model_cfg

    crop, mapping = crop_search_region(frame, state.prev_box, cfg.search_factor, mcfg.search_size)
    enc_out, outputs = run_model(
        state.params, mcfg, state.lang_ids, state.tmpl_content, state.dynamic.tokens, crop
    )
    layout = enc_out.final_attention.layout
    box_crop = decode_box(outputs, cfg.window_weight)
    box = _clamp_to_frame(mapping.box_to_frame(box_crop), w, h)

    state.frame_index += 1

    deltas = compute_deltas(
        state.stamp, frame, box, from_corners=cfg.displacement_from_corners
    )
    updated = should_update(deltas, cfg.policy)

    capture_boxes: list[tuple[int, Box, float]] = []
    if cfg.topk > 0 and (not cfg.gate_capture_by_policy or updated):
        scores = cls_to_search_attention(enc_out.final_attention)
        state.dynamic = capture_dynamic_template(
            crop, scores, cfg.topk, state.params.embed, frame_index=state.frame_index
        )
        order = topk_indices(scores.scores, cfg.topk)
        capture_boxes = [
            (int(i), b, float(scores.scores[int(i)]))
            for i, b in zip(order, state.dynamic.boxes)
        ]
    elif cfg.topk == 0:
        state.dynamic = empty_dynamic_template(mcfg.width, state.frame_index)

    if updated:
        state.stamp = commit_update(
            state.stamp, frame, box, state.category,
            frame_index=state.frame_index, captioner=state.captioner,
        )
        state.lang_ids = tokenize_text(state.stamp.description, state.vocab, mcfg.n_lang)

    state.prev_box = box
    diag = FrameDiagnostics(
        frame_index=state.frame_index,
        deltas=deltas,
        updated=updated,
        description=state.stamp.description,
        capture_boxes=capture_boxes,
        token_counts=(layout.n_lang, layout.n_tmpl, layout.n_search),
    )
    return box, diag


def track_sequence(
    frames: list[np.ndarray],
    gt0: Box,
    description: str,
    category: str,
    params: TrackerParams,
    model_cfg: ModelConfig,
    cfg: TrackConfig,
    vocab: Vocabulary,
    captioner=None,
) -> tuple[list[Box], list[FrameDiagnostics]]:
    """Track a whole sequence; frame 0 echoes the given annotation."""
    state = init_tracker(frames[0], gt0, description, category, params, model_cfg, cfg, vocab, captioner)
    boxes = [gt0]
    diags: list[FrameDiagnostics] = []
    for frame in frames[1:]:
        box, diag = track_frame(state, frame)
        boxes.append(box)
        diags.append(diag)
    return boxes, diags
