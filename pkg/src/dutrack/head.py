"""Box-prediction head: center score, sub-patch offset and size branches over
the search token grid, plus window-penalized decoding back to a box."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box
from .embedding import PATCH
from .kernels import ShapeError


@dataclass
class HeadParams:
    w_score: np.ndarray   # (d, 1)
    b_score: np.ndarray
    w_offset: np.ndarray  # (d, 2)
    b_offset: np.ndarray
    w_size: np.ndarray    # (d, 2)
    b_size: np.ndarray

    @classmethod
    def create(cls, d: int, rng: np.random.Generator, dtype=np.float64) -> "HeadParams":
        def w(cols):
            return (rng.standard_normal((d, cols)) / np.sqrt(d)).astype(dtype)
        return cls(
            w(1), np.zeros(1, dtype=dtype),
            w(2), np.zeros(2, dtype=dtype),
            w(2), np.zeros(2, dtype=dtype),
        )


@dataclass
class HeadOutputs:
    """score in [0,1]; offset channels are (x, y) sub-patch fractions in [0,1);
    size channels are (w, h) fractions of the crop side."""

    score: np.ndarray   # (g, g)
    offset: np.ndarray  # (g, g, 2)
    size: np.ndarray    # (g, g, 2)

    @property
    def grid(self) -> int:
        return self.score.shape[0]


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def head_forward(f_s: np.ndarray, params: HeadParams) -> HeadOutputs:
    out, _ = head_forward_cached(f_s, params)
    return out


def head_forward_cached(f_s: np.ndarray, params: HeadParams):
    f_s = np.asarray(f_s)
    n = f_s.shape[0]
    g = int(round(np.sqrt(n)))
    if g * g != n:
        raise ShapeError(f"search token count {n} is not a perfect square")
    raw_score = f_s @ params.w_score + params.b_score
    raw_offset = f_s @ params.w_offset + params.b_offset
    raw_size = f_s @ params.w_size + params.b_size
    outputs = HeadOutputs(
        score=sigmoid(raw_score).reshape(g, g),
        offset=sigmoid(raw_offset).reshape(g, g, 2),
        size=sigmoid(raw_size).reshape(g, g, 2),
    )
    cache = (f_s, outputs)
    return outputs, cache


def head_backward(cache, params: HeadParams, d_raw_score, d_raw_offset, d_raw_size):
    """Backward from gradients on the raw (pre-sigmoid) branch outputs,
    flattened to (n, channels). Returns (d_f_s, grads)."""
    f_s, _ = cache
    grads = {
        "w_score": f_s.T @ d_raw_score,
        "b_score": d_raw_score.sum(axis=0),
        "w_offset": f_s.T @ d_raw_offset,
        "b_offset": d_raw_offset.sum(axis=0),
        "w_size": f_s.T @ d_raw_size,
        "b_size": d_raw_size.sum(axis=0),
    }
    d_f_s = (
        d_raw_score @ params.w_score.T
        + d_raw_offset @ params.w_offset.T
        + d_raw_size @ params.w_size.T
    )
    return d_f_s, grads


def cosine_window(g: int) -> np.ndarray:
    if g == 1:
        return np.ones((1, 1))
    w = np.hanning(g)
    return np.outer(w, w)


def decode_box(h: HeadOutputs, window_weight: float) -> Box:
    """Pick the window-penalized argmax cell and assemble the box in crop
    coordinates. Ties resolve to the smaller row-major index."""
    if not 0.0 <= window_weight < 1.0:
        raise ValueError("window_weight must lie in [0, 1)")
    g = h.grid
    crop = g * PATCH
    penalized = (1.0 - window_weight) * h.score + window_weight * cosine_window(g)
    idx = int(np.argmax(penalized))
    r, c = divmod(idx, g)
    cx = PATCH * c + PATCH * float(h.offset[r, c, 0])
    cy = PATCH * r + PATCH * float(h.offset[r, c, 1])
    w = float(h.size[r, c, 0]) * crop
    hh = float(h.size[r, c, 1]) * crop
    x = min(max(cx - w / 2.0, 0.0), crop - w)
    y = min(max(cy - hh / 2.0, 0.0), crop - hh)
    return Box(x, y, w, hh)
