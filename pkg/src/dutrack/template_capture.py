"""Attention-guided capture of dynamic template patches.

The leading language token's attention row, restricted to search columns and
averaged over heads, scores every search patch; the k best patches are cut
out of the crop and re-embedded so they behave exactly like ordinary
template tokens on the next frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box
from .embedding import PATCH, PatchEmbedParams, embed_image
from .encoder import AttentionRecord, SegmentLayout
from .kernels import require_finite


@dataclass
class ClsSearchScores:
    """Head-averaged attention mass from the [CLS] token onto each search patch."""

    scores: np.ndarray  # (n_search,)
    layout: SegmentLayout


@dataclass
class DynamicTemplate:
    boxes: list[Box]      # 16x16-aligned patch boxes in search-crop coordinates
    tokens: np.ndarray    # (k, d)
    frame_index: int

    @property
    def k(self) -> int:
        return self.tokens.shape[0]


def empty_dynamic_template(width: int, frame_index: int = -1) -> DynamicTemplate:
    return DynamicTemplate(boxes=[], tokens=np.zeros((0, width)), frame_index=frame_index)


def cls_to_search_attention(record: AttentionRecord) -> ClsSearchScores:
    """Mean over heads of the [CLS] row restricted to search columns."""
    layout = record.layout
    if layout.n_lang < 1:
        raise ValueError("layout has no language tokens; [CLS] row undefined")
    if layout.n_search < 1:
        raise ValueError("layout has an empty search segment")
    scores = record.probs[:, 0, layout.search_slice].mean(axis=0)
    return ClsSearchScores(scores=scores, layout=layout)


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, descending; ties go to the smaller index."""
    scores = np.asarray(scores)
    if k < 0 or k > scores.size:
        raise ValueError(f"k={k} out of range for {scores.size} scores")
    require_finite("topk scores", scores)
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def index_to_patch_box(idx: int, search_w: int, search_h: int | None = None) -> Box:
    """Row-major inverse of the patch-embedding block mapping."""
    if search_w % PATCH:
        raise ValueError(f"search width {search_w} not divisible by {PATCH}")
    search_h = search_w if search_h is None else search_h
    cols = search_w // PATCH
    n = cols * (search_h // PATCH)
    if not 0 <= idx < n:
        raise ValueError(f"patch index {idx} out of range for a {search_w}x{search_h} crop")
    return Box(PATCH * (idx % cols), PATCH * (idx // cols), PATCH, PATCH)


def capture_dynamic_template(
    search_crop: np.ndarray,
    scores: ClsSearchScores | np.ndarray,
    k: int,
    embed: PatchEmbedParams,
    frame_index: int = 0,
) -> DynamicTemplate:
    """Cut the k top-scoring 16x16 patches out of the crop and embed each one."""
    crop = np.asarray(search_crop)
    values = scores.scores if isinstance(scores, ClsSearchScores) else np.asarray(scores)
    h, w = crop.shape[:2]
    if values.size != (h // PATCH) * (w // PATCH):
        raise ValueError(
            f"{values.size} scores do not match the {h // PATCH}x{w // PATCH} token grid"
        )
    boxes: list[Box] = []
    rows = []
    for idx in topk_indices(values, k):
        box = index_to_patch_box(int(idx), w, h)
        boxes.append(box)
        patch = crop[int(box.y) : int(box.y) + PATCH, int(box.x) : int(box.x) + PATCH]
        rows.append(embed_image(patch, embed)[0])
    tokens = np.stack(rows) if rows else np.zeros((0, embed.width))
    return DynamicTemplate(boxes=boxes, tokens=tokens, frame_index=frame_index)
