"""Language-reference maintenance: change detection against the last-update
snapshot, the threshold policy, and description generation.

The description generator is deliberately closed-vocabulary so the text
tokenizer never sees an unknown word; an external captioner can be plugged
in through :class:`ExternalCommandCaptioner`.
"""
from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .boxes import Box

log = logging.getLogger(__name__)

STRIDE = 16

# Canonical color anchors; order breaks ties deterministically.
COLOR_ANCHORS: tuple[tuple[str, tuple[int, int, int]], ...] = (
    ("red", (255, 0, 0)),
    ("green", (0, 255, 0)),
    ("blue", (0, 0, 255)),
    ("yellow", (255, 255, 0)),
    ("cyan", (0, 255, 255)),
    ("magenta", (255, 0, 255)),
    ("white", (255, 255, 255)),
    ("black", (0, 0, 0)),
)

SIZE_WORDS = ("small", "medium", "large")
SIZE_CUTPOINTS = (0.02, 0.10)  # fractions of frame area

POSITION_WORDS = (
    ("top-left", "top", "top-right"),
    ("left", "center", "right"),
    ("bottom-left", "bottom", "bottom-right"),
)

FILLER_WORDS = ("at", "the", "of", "frame")


def caption_words() -> list[str]:
    """Every word the rule-based generator can emit, category aside."""
    words: list[str] = [name for name, _ in COLOR_ANCHORS]
    words += SIZE_WORDS
    for row in POSITION_WORDS:
        words += row
    words += FILLER_WORDS
    return words


# ---------------------------------------------------------------------------
# snapshot and deltas


@dataclass(frozen=True)
class ObjectStamp:
    """Target snapshot recorded at the last language update."""

    box: Box
    mean_rgb: tuple[float, float, float]
    frame_index: int
    description: str
    category: str


@dataclass(frozen=True)
class UpdateDeltas:
    scale: float         # stamp area / current area
    displacement: float  # pixels
    color: float         # euclidean distance between RGB means

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale ratio must be positive")
        if self.displacement < 0 or self.color < 0:
            raise ValueError("displacement and color deltas must be non-negative")


@dataclass(frozen=True)
class UpdatePolicy:
    """Thresholds gating description regeneration.

    tau_d is in pixels; use :meth:`from_strides` to express it as a multiple
    of the 16-pixel patch stride.
    """

    tau_s: float = 0.8
    tau_d: float = 1.0 * STRIDE
    tau_c: float = 25.0
    stride: int = STRIDE
    symmetric_scale: bool = False

    def __post_init__(self):
        if self.tau_s < 0 or self.tau_d < 0 or self.tau_c < 0:
            raise ValueError("thresholds must be non-negative")

    @classmethod
    def from_strides(cls, tau_s: float, tau_d_strides: float, tau_c: float = 25.0, **kw) -> "UpdatePolicy":
        return cls(tau_s=tau_s, tau_d=tau_d_strides * STRIDE, tau_c=tau_c, **kw)

    @classmethod
    def never(cls) -> "UpdatePolicy":
        return cls(tau_s=0.0, tau_d=np.inf, tau_c=np.inf)


def scale_ratio(stamp: Box, cur: Box) -> float:
    """Area of the stamped box over the current one."""
    return stamp.area / cur.area


def center_displacement(stamp: Box, cur: Box, from_corners: bool = False) -> float:
    """Euclidean distance between box centers (or top-left corners)."""
    if from_corners:
        ax, ay, bx, by = stamp.x, stamp.y, cur.x, cur.y
    else:
        (ax, ay), (bx, by) = stamp.center, cur.center
    return float(np.hypot(ax - bx, ay - by))


def mean_rgb(frame: np.ndarray, box: Box) -> tuple[float, float, float]:
    """Per-channel mean over the integer pixels inside the box, clipped to the frame."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    x0 = max(int(np.floor(box.x)), 0)
    y0 = max(int(np.floor(box.y)), 0)
    x1 = min(int(np.ceil(box.x + box.w)), w)
    y1 = min(int(np.ceil(box.y + box.h)), h)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"box {box.as_tuple()} lies outside the {w}x{h} frame")
    region = frame[y0:y1, x0:x1].astype(np.float64).reshape(-1, 3)
    r, g, b = region.mean(axis=0)
    return (float(r), float(g), float(b))


def color_shift(a: tuple[float, float, float], b: tuple[float, float, float]) -> float:
    """Euclidean distance in RGB-mean space."""
    return float(np.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))))


def compute_deltas(stamp: ObjectStamp, frame: np.ndarray, cur: Box, *, from_corners: bool = False) -> UpdateDeltas:
    return UpdateDeltas(
        scale=scale_ratio(stamp.box, cur),
        displacement=center_displacement(stamp.box, cur, from_corners=from_corners),
        color=color_shift(stamp.mean_rgb, mean_rgb(frame, cur)),
    )


def should_update(d: UpdateDeltas, p: UpdatePolicy) -> bool:
    """True when the description should be regenerated: the target grew past
    the scale threshold, moved further than tau_d, or changed color past tau_c."""
    if d.scale < p.tau_s:
        return True
    if p.symmetric_scale and p.tau_s > 0 and d.scale > 1.0 / p.tau_s:
        return True
    return d.displacement > p.tau_d or d.color > p.tau_c


# ---------------------------------------------------------------------------
# description generation


def _nearest_color_name(rgb: tuple[float, float, float]) -> str:
    best_name, best_dist = COLOR_ANCHORS[0][0], np.inf
    for name, anchor in COLOR_ANCHORS:
        dist = color_shift(rgb, anchor)
        if dist < best_dist:
            best_name, best_dist = name, dist
    return best_name


def _size_word(box: Box, frame_w: int, frame_h: int) -> str:
    ratio = box.area / float(frame_w * frame_h)
    if ratio < SIZE_CUTPOINTS[0]:
        return SIZE_WORDS[0]
    if ratio < SIZE_CUTPOINTS[1]:
        return SIZE_WORDS[1]
    return SIZE_WORDS[2]


def _position_word(box: Box, frame_w: int, frame_h: int) -> str:
    cx, cy = box.center
    col = min(int(3 * cx / frame_w), 2)
    row = min(int(3 * cy / frame_h), 2)
    return POSITION_WORDS[row][col]


def generate_description(frame: np.ndarray, box: Box, category: str) -> str:
    """Deterministic caption: color, category, size bucket and 3x3 grid cell."""
    h, w = np.asarray(frame).shape[:2]
    color = _nearest_color_name(mean_rgb(frame, box))
    size = _size_word(box, w, h)
    position = _position_word(box, w, h)
    return f"{color} {category} {size} at the {position} of the frame"


class RuleBasedCaptioner:
    """Default captioner wrapping :func:`generate_description`."""

    def describe(self, frame: np.ndarray, box: Box, category: str) -> str:
        return generate_description(frame, box, category)


class ExternalCommandCaptioner:
    """Spawn an external command to produce one caption line.

    The command receives (image path, "x,y,w,h", category) and must print a
    single UTF-8 line. Timeouts, non-zero exits and empty output fall back to
    the rule-based generator.
    """

    def __init__(self, command: str, timeout: float = 10.0):
        self.argv = shlex.split(command)
        if not self.argv:
            raise ValueError("captioner command is empty")
        self.timeout = timeout
        self._fallback = RuleBasedCaptioner()

    def describe(self, frame: np.ndarray, box: Box, category: str) -> str:
        from .sequences import write_ppm

        with tempfile.TemporaryDirectory(prefix="dutrack-cap-") as tmp:
            path = Path(tmp) / "frame.ppm"
            write_ppm(path, np.asarray(frame, dtype=np.uint8))
            argv = self.argv + [str(path), "%g,%g,%g,%g" % box.as_tuple(), category]
            try:
                proc = subprocess.run(
                    argv, capture_output=True, timeout=self.timeout, check=False
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                log.warning("captioner failed (%s); using rule-based fallback", exc)
                return self._fallback.describe(frame, box, category)
        if proc.returncode != 0:
            log.warning("captioner exited %d; using rule-based fallback", proc.returncode)
            return self._fallback.describe(frame, box, category)
        line = proc.stdout.decode("utf-8", errors="replace").strip().splitlines()
        if not line or not line[0].strip():
            log.warning("captioner printed nothing; using rule-based fallback")
            return self._fallback.describe(frame, box, category)
        return line[0].strip()


def make_captioner(command: str = "", timeout: float = 10.0):
    if command:
        return ExternalCommandCaptioner(command, timeout=timeout)
    return RuleBasedCaptioner()


def initial_stamp(frame: np.ndarray, box: Box, description: str, category: str) -> ObjectStamp:
    return ObjectStamp(
        box=box,
        mean_rgb=mean_rgb(frame, box),
        frame_index=0,
        description=description,
        category=category,
    )


def commit_update(
    stamp: ObjectStamp,
    frame: np.ndarray,
    box: Box,
    category: str,
    *,
    frame_index: int,
    captioner=None,
) -> ObjectStamp:
    """Produce the new snapshot after a positive update decision."""
    captioner = captioner or RuleBasedCaptioner()
    description = captioner.describe(frame, box, category)
    return replace(
        stamp,
        box=box,
        mean_rgb=mean_rgb(frame, box),
        frame_index=frame_index,
        description=description,
        category=category,
    )
