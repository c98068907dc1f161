"""Deterministic generator of appearance-change sequences with exact ground
truth: drifting colors, scale ramps, parametric trajectories, distractors and
per-frame background noise, all seeded.

Rendering uses hard edges (no anti-aliasing) so the ground-truth box bounds
the rendered object exactly.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import Box
from .language_update import COLOR_ANCHORS, generate_description
from .sequences import Sequence


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Motion:
    """Parametric center trajectory: linear drift or per-axis sine."""

    kind: str = "linear"  # "linear" | "sine"
    start: tuple[float, float] = (80.0, 80.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    period: float = 60.0
    phase: float = 0.0

    def center_at(self, t: int) -> tuple[float, float]:
        if self.kind == "linear":
            return (self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t)
        if self.kind == "sine":
            w = 2.0 * math.pi / self.period
            return (
                self.start[0] + self.amplitude[0] * math.sin(w * t + self.phase),
                self.start[1] + self.amplitude[1] * math.sin(w * t + self.phase + math.pi / 2.0),
            )
        raise SpecError(f"unknown motion kind '{self.kind}'")


@dataclass(frozen=True)
class DistractorSpec:
    shape: str
    color: tuple[float, float, float]
    w: int
    h: int
    motion: Motion


@dataclass(frozen=True)
class SynthSpec:
    name: str
    width: int = 160
    height: int = 160
    length: int = 48
    shape: str = "rectangle"  # "rectangle" | "ellipse"
    color: tuple[float, float, float] = (220.0, 40.0, 40.0)
    color_drift: tuple[float, float, float] = (0.0, 0.0, 0.0)  # per-frame RGB delta
    w_start: int = 32
    h_start: int = 32
    w_end: int | None = None  # None: constant extents
    h_end: int | None = None
    motion: Motion = field(default_factory=Motion)
    distractors: tuple[DistractorSpec, ...] = ()
    noise_amp: float = 6.0
    background: tuple[float, float, float] = (120.0, 120.0, 120.0)
    seed: int = 0
    category: str = "rectangle"


def _extents_at(spec: SynthSpec, t: int) -> tuple[int, int]:
    if spec.length <= 1 or spec.w_end is None or spec.h_end is None:
        return spec.w_start, spec.h_start
    frac = t / (spec.length - 1)
    w = int(round(spec.w_start + (spec.w_end - spec.w_start) * frac))
    h = int(round(spec.h_start + (spec.h_end - spec.h_start) * frac))
    return w, h


def _color_at(spec: SynthSpec, t: int) -> np.ndarray:
    c = np.asarray(spec.color, dtype=np.float64) + t * np.asarray(spec.color_drift, dtype=np.float64)
    return np.clip(c, 0.0, 255.0)


def _intended_box(center: tuple[float, float], w: int, h: int) -> tuple[int, int, int, int]:
    x0 = int(round(center[0] - w / 2.0))
    y0 = int(round(center[1] - h / 2.0))
    return x0, y0, w, h


def _validate(spec: SynthSpec) -> None:
    if spec.length < 1:
        raise SpecError("sequence length must be at least 1")
    if spec.shape not in ("rectangle", "ellipse"):
        raise SpecError(f"unknown shape '{spec.shape}'")
    for t in range(spec.length):
        w, h = _extents_at(spec, t)
        if w < 8 or h < 8:
            raise SpecError(f"{spec.name}: target extents fall below 8 px at frame {t}")
        x0, y0, _, _ = _intended_box(spec.motion.center_at(t), w, h)
        ix = max(0, min(x0 + w, spec.width) - max(x0, 0))
        iy = max(0, min(y0 + h, spec.height) - max(y0, 0))
        if ix * iy < 0.5 * w * h:
            raise SpecError(f"{spec.name}: target leaves the frame at frame {t}")


def _object_mask(shape: str, x0: int, y0: int, w: int, h: int, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    if shape == "rectangle":
        mask[max(y0, 0) : max(y0 + h, 0), max(x0, 0) : max(x0 + w, 0)] = True
        mask[:, : max(x0, 0)] = False
        mask[: max(y0, 0), :] = False
        # slicing above already clips the far edges
        return mask
    ys, xs = np.mgrid[0:height, 0:width]
    cx, cy = x0 + w / 2.0, y0 + h / 2.0
    a, b = w / 2.0, h / 2.0
    return ((xs + 0.5 - cx) / a) ** 2 + ((ys + 0.5 - cy) / b) ** 2 <= 1.0


def generate_sequence(spec: SynthSpec) -> Sequence:
    """Render the spec; deterministic in the seed, ground truth from the
    rendered target mask (so boxes bound the object exactly)."""
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    frames: list[np.ndarray] = []
    boxes: list[Box] = []
    bg = np.asarray(spec.background, dtype=np.float64)

    for t in range(spec.length):
        frame = np.tile(bg, (spec.height, spec.width, 1))
        if spec.noise_amp > 0:
            frame += rng.uniform(-spec.noise_amp, spec.noise_amp, size=frame.shape)

        for d in spec.distractors:
            x0, y0, w, h = _intended_box(d.motion.center_at(t), d.w, d.h)
            mask = _object_mask(d.shape, x0, y0, w, h, spec.width, spec.height)
            frame[mask] = np.asarray(d.color, dtype=np.float64)

        w, h = _extents_at(spec, t)
        x0, y0, _, _ = _intended_box(spec.motion.center_at(t), w, h)
        mask = _object_mask(spec.shape, x0, y0, w, h, spec.width, spec.height)
        frame[mask] = _color_at(spec, t)
        ys, xs = np.nonzero(mask)
        boxes.append(
            Box(float(xs.min()), float(ys.min()), float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1))
        )
        frames.append(np.clip(np.round(frame), 0, 255).astype(np.uint8))

    description = generate_description(frames[0], boxes[0], spec.category)
    return Sequence(spec.name, frames, boxes, spec.category, description)


# ---------------------------------------------------------------------------
# standard suites

_PALETTE = tuple(rgb for _, rgb in COLOR_ANCHORS)
_PALETTE_NAMES = tuple(name for name, _ in COLOR_ANCHORS)


def _linear_motion(rng, width, height, margin, speed) -> Motion:
    angle = rng.uniform(0.0, 2.0 * math.pi)
    return _directed_linear(rng, width, height, margin, speed, angle)


def _directed_linear(rng, width, height, margin, speed, angle) -> Motion:
    vx, vy = speed * math.cos(angle), speed * math.sin(angle)
    def place(v, lo, hi, steps):
        span = abs(v) * steps
        if span > hi - lo:  # too fast to fit; shrink
            v = math.copysign((hi - lo) / max(steps, 1), v)
            span = abs(v) * steps
        start = rng.uniform(lo, hi - span)
        if v < 0:
            start = start + span
        return start, v
    # 63 steps covers every suite length used here
    sx, vx = place(vx, margin, width - margin, 63)
    sy, vy = place(vy, margin, height - margin, 63)
    return Motion(kind="linear", start=(sx, sy), velocity=(vx, vy))


def _sine_motion(rng, width, height, margin, amp_lo, amp_hi, period) -> Motion:
    ax = rng.uniform(amp_lo, amp_hi)
    ay = rng.uniform(amp_lo, amp_hi)
    cx = rng.uniform(margin + ax, width - margin - ax)
    cy = rng.uniform(margin + ay, height - margin - ay)
    return Motion(kind="sine", start=(cx, cy), amplitude=(ax, ay), period=period, phase=rng.uniform(0, 2 * math.pi))


def _pick_shape(rng) -> tuple[str, str]:
    shape = "rectangle" if rng.random() < 0.5 else "ellipse"
    return shape, shape


def _distractor(rng, spec_w, spec_h, color, size, shape="rectangle") -> DistractorSpec:
    motion = _sine_motion(rng, spec_w, spec_h, size, 8.0, 26.0, rng.uniform(40.0, 70.0))
    return DistractorSpec(shape=shape, color=tuple(float(c) for c in color), w=size, h=size, motion=motion)


def _drift_to(start, end, length) -> tuple[float, float, float]:
    steps = max(length - 1, 1)
    return tuple((float(e) - float(s)) / steps for s, e in zip(start, end))


def suite_static(seed: int = 0) -> list[SynthSpec]:
    rng = np.random.default_rng(seed + 101)
    specs = []
    for i in range(6):
        shape, category = _pick_shape(rng)
        size = int(rng.integers(28, 45))
        color = _PALETTE[i % len(_PALETTE)]
        cx = rng.uniform(size, 160 - size)
        cy = rng.uniform(size, 160 - size)
        specs.append(
            SynthSpec(
                name=f"static-{i:02d}",
                length=40,
                shape=shape,
                category=category,
                color=tuple(float(c) for c in color),
                w_start=size,
                h_start=size,
                motion=Motion(start=(cx, cy)),
                noise_amp=4.0,
                seed=seed * 1000 + i,
            )
        )
    return specs


def suite_drift_color(seed: int = 0) -> list[SynthSpec]:
    rng = np.random.default_rng(seed + 202)
    specs = []
    for i in range(10):
        shape, category = _pick_shape(rng)
        size = int(rng.integers(32, 45))
        start_idx = int(rng.integers(0, len(_PALETTE)))
        end_idx = (start_idx + int(rng.integers(2, len(_PALETTE) - 1))) % len(_PALETTE)
        start_color, end_color = _PALETTE[start_idx], _PALETTE[end_idx]
        length = 64
        motion = _sine_motion(rng, 160, 160, size, 14.0, 30.0, rng.uniform(48.0, 80.0))
        distractor = _distractor(rng, 160, 160, start_color, int(rng.integers(28, 40)), shape)
        specs.append(
            SynthSpec(
                name=f"drift-color-{i:02d}",
                length=length,
                shape=shape,
                category=category,
                color=tuple(float(c) for c in start_color),
                color_drift=_drift_to(start_color, end_color, length),
                w_start=size,
                h_start=size,
                motion=motion,
                distractors=(distractor,),
                noise_amp=6.0,
                seed=seed * 1000 + 100 + i,
            )
        )
    return specs


def suite_scale_ramp(seed: int = 0) -> list[SynthSpec]:
    rng = np.random.default_rng(seed + 303)
    specs = []
    for i in range(10):
        shape, category = _pick_shape(rng)
        grow = i % 2 == 0
        s0 = int(rng.integers(22, 30))
        s1 = int(rng.integers(44, 56))
        w0, w1 = (s0, s1) if grow else (s1, s0)
        start_idx = int(rng.integers(0, len(_PALETTE)))
        end_idx = (start_idx + int(rng.integers(2, len(_PALETTE) - 1))) % len(_PALETTE)
        start_color = np.asarray(_PALETTE[start_idx], dtype=np.float64)
        # drift halfway toward the second anchor: appearance changes but the
        # ramp stays the defining challenge
        end_color = 0.5 * (start_color + np.asarray(_PALETTE[end_idx], dtype=np.float64))
        length = 56
        margin = max(w0, w1)
        motion = _sine_motion(rng, 160, 160, margin / 2 + 6, 10.0, 22.0, rng.uniform(48.0, 80.0))
        distractor = _distractor(rng, 160, 160, start_color, int(rng.integers(26, 36)), shape)
        specs.append(
            SynthSpec(
                name=f"scale-ramp-{i:02d}",
                length=length,
                shape=shape,
                category=category,
                color=tuple(float(c) for c in start_color),
                color_drift=_drift_to(start_color, end_color, length),
                w_start=w0,
                h_start=w0,
                w_end=w1,
                h_end=w1,
                motion=motion,
                distractors=(distractor,),
                noise_amp=6.0,
                seed=seed * 1000 + 200 + i,
            )
        )
    return specs


def suite_fast_motion(seed: int = 0) -> list[SynthSpec]:
    rng = np.random.default_rng(seed + 404)
    specs = []
    for i in range(6):
        shape, category = _pick_shape(rng)
        size = int(rng.integers(28, 40))
        color = _PALETTE[(i + 3) % len(_PALETTE)]
        motion = _linear_motion(rng, 160, 160, size, rng.uniform(4.0, 7.0))
        specs.append(
            SynthSpec(
                name=f"fast-motion-{i:02d}",
                length=40,
                shape=shape,
                category=category,
                color=tuple(float(c) for c in color),
                w_start=size,
                h_start=size,
                motion=motion,
                noise_amp=6.0,
                seed=seed * 1000 + 300 + i,
            )
        )
    return specs


def suite_distractor(seed: int = 0) -> list[SynthSpec]:
    rng = np.random.default_rng(seed + 505)
    specs = []
    for i in range(6):
        shape, category = _pick_shape(rng)
        size = int(rng.integers(30, 42))
        idx = int(rng.integers(0, len(_PALETTE)))
        color = _PALETTE[idx]
        other = _PALETTE[(idx + 3) % len(_PALETTE)]
        motion = _sine_motion(rng, 160, 160, size, 12.0, 26.0, rng.uniform(48.0, 72.0))
        specs.append(
            SynthSpec(
                name=f"distractor-{i:02d}",
                length=48,
                shape=shape,
                category=category,
                color=tuple(float(c) for c in color),
                w_start=size,
                h_start=size,
                motion=motion,
                distractors=(
                    _distractor(rng, 160, 160, color, int(rng.integers(26, 36)), shape),
                    _distractor(rng, 160, 160, other, int(rng.integers(26, 36)), shape),
                ),
                noise_amp=6.0,
                seed=seed * 1000 + 400 + i,
            )
        )
    return specs


def suite_train(seed: int = 0) -> list[SynthSpec]:
    """Training mixture: slow/clean, color-drifting, scale-ramping and fast
    sequences; every palette color appears both as a target and a distractor."""
    rng = np.random.default_rng(seed + 606)
    specs: list[SynthSpec] = []
    n_colors = len(_PALETTE)

    for i in range(8):  # clean localization
        shape, category = _pick_shape(rng)
        size = int(rng.integers(24, 48))
        color = _PALETTE[i % n_colors]
        motion = _sine_motion(rng, 160, 160, size, 6.0, 20.0, rng.uniform(40.0, 80.0))
        distractors = ()
        if i % 2 == 0:
            distractors = (_distractor(rng, 160, 160, _PALETTE[(i + 4) % n_colors], int(rng.integers(24, 40)), shape),)
        specs.append(
            SynthSpec(
                name=f"train-clean-{i:02d}", length=48, shape=shape, category=category,
                color=tuple(float(c) for c in color), w_start=size, h_start=size,
                motion=motion, distractors=distractors, noise_amp=6.0,
                seed=seed * 1000 + 500 + i,
            )
        )

    for i in range(10):  # full color drift with an initial-color distractor
        shape, category = _pick_shape(rng)
        size = int(rng.integers(30, 46))
        start_idx = i % n_colors
        end_idx = (start_idx + int(rng.integers(2, n_colors - 1))) % n_colors
        length = 56
        motion = _sine_motion(rng, 160, 160, size, 10.0, 26.0, rng.uniform(44.0, 80.0))
        specs.append(
            SynthSpec(
                name=f"train-drift-{i:02d}", length=length, shape=shape, category=category,
                color=tuple(float(c) for c in _PALETTE[start_idx]),
                color_drift=_drift_to(_PALETTE[start_idx], _PALETTE[end_idx], length),
                w_start=size, h_start=size, motion=motion,
                distractors=(_distractor(rng, 160, 160, _PALETTE[start_idx], int(rng.integers(26, 40)), shape),),
                noise_amp=6.0, seed=seed * 1000 + 600 + i,
            )
        )

    for i in range(8):  # scale ramps with mild drift
        shape, category = _pick_shape(rng)
        grow = i % 2 == 0
        s0, s1 = int(rng.integers(22, 30)), int(rng.integers(42, 54))
        w0, w1 = (s0, s1) if grow else (s1, s0)
        start_idx = (i + 2) % n_colors
        end_idx = (start_idx + 3) % n_colors
        start_color = np.asarray(_PALETTE[start_idx], dtype=np.float64)
        end_color = 0.5 * (start_color + np.asarray(_PALETTE[end_idx], dtype=np.float64))
        length = 56
        motion = _sine_motion(rng, 160, 160, max(w0, w1) / 2 + 6, 8.0, 20.0, rng.uniform(44.0, 80.0))
        specs.append(
            SynthSpec(
                name=f"train-scale-{i:02d}", length=length, shape=shape, category=category,
                color=tuple(float(c) for c in start_color),
                color_drift=_drift_to(start_color, end_color, length),
                w_start=w0, h_start=w0, w_end=w1, h_end=w1, motion=motion,
                distractors=(_distractor(rng, 160, 160, start_color, int(rng.integers(24, 36)), shape),),
                noise_amp=6.0, seed=seed * 1000 + 700 + i,
            )
        )

    for i in range(6):  # faster motion
        shape, category = _pick_shape(rng)
        size = int(rng.integers(26, 40))
        color = _PALETTE[(i + 5) % n_colors]
        motion = _linear_motion(rng, 160, 160, size, rng.uniform(3.0, 6.0))
        specs.append(
            SynthSpec(
                name=f"train-fast-{i:02d}", length=40, shape=shape, category=category,
                color=tuple(float(c) for c in color), w_start=size, h_start=size,
                motion=motion, noise_amp=6.0, seed=seed * 1000 + 800 + i,
            )
        )
    return specs


SUITES = {
    "static": suite_static,
    "drift-color": suite_drift_color,
    "scale-ramp": suite_scale_ramp,
    "fast-motion": suite_fast_motion,
    "distractor": suite_distractor,
    "train": suite_train,
}


def suite_specs(name: str, seed: int = 0) -> list[SynthSpec]:
    if name not in SUITES:
        raise SpecError(f"unknown suite '{name}' (have: {', '.join(sorted(SUITES))})")
    return SUITES[name](seed)


# ---------------------------------------------------------------------------
# JSON spec files


def spec_from_dict(d: dict) -> SynthSpec:
    d = dict(d)
    if "motion" in d:
        d["motion"] = Motion(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["motion"].items()})
    if "distractors" in d:
        ds = []
        for dd in d["distractors"]:
            dd = dict(dd)
            dd["motion"] = Motion(**{k: tuple(v) if isinstance(v, list) else v for k, v in dd["motion"].items()})
            dd["color"] = tuple(dd["color"])
            ds.append(DistractorSpec(**dd))
        d["distractors"] = tuple(ds)
    for key in ("color", "color_drift", "background"):
        if key in d:
            d[key] = tuple(d[key])
    return SynthSpec(**d)


def load_suite_file(path) -> list[SynthSpec]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"suite spec file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from exc
    entries = payload["sequences"] if isinstance(payload, dict) else payload
    try:
        return [spec_from_dict(e) for e in entries]
    except (TypeError, KeyError) as exc:
        raise SpecError(f"{path}: malformed sequence spec ({exc})") from exc


def save_suite_file(path, specs: list[SynthSpec]) -> None:
    payload = {"sequences": [dataclasses.asdict(s) for s in specs]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
