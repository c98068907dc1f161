"""Tracking metrics: success AUC, precision and normalized precision, plus
result-directory evaluation against the dataset layout."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import Box
from .sequences import list_sequence_dirs, read_boxes

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
NORM_PRECISION_THRESHOLDS = np.linspace(0.0, 0.5, 21)
PRECISION_RADIUS = 20.0


@dataclass(frozen=True)
class Metrics:
    auc: float
    precision: float
    norm_precision: float

    def __post_init__(self):
        for v in (self.auc, self.precision, self.norm_precision):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"metric value {v} outside [0, 1]")


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _check_lengths(pred, gt):
    if not pred or len(pred) != len(gt):
        raise ValueError(f"prediction/ground-truth lengths differ: {len(pred)} vs {len(gt)}")


def success_auc(pred: list[Box], gt: list[Box]) -> float:
    """Mean over the 21-point threshold grid of the fraction of frames whose
    overlap strictly exceeds the threshold (OTB convention)."""
    _check_lengths(pred, gt)
    ious = np.array([iou(p, g) for p, g in zip(pred, gt)])
    return float(np.mean([(ious > t).mean() for t in SUCCESS_THRESHOLDS]))


def _center_dist(pred, gt) -> np.ndarray:
    return np.array(
        [float(np.hypot(p.center[0] - g.center[0], p.center[1] - g.center[1])) for p, g in zip(pred, gt)]
    )


def precision(pred: list[Box], gt: list[Box], radius: float = PRECISION_RADIUS) -> float:
    """Fraction of frames whose center error is within the radius."""
    _check_lengths(pred, gt)
    return float((_center_dist(pred, gt) <= radius).mean())


def norm_precision(pred: list[Box], gt: list[Box]) -> float:
    """Center error normalized by sqrt(gt area), averaged over thresholds."""
    _check_lengths(pred, gt)
    dist = _center_dist(pred, gt)
    norm = dist / np.array([np.sqrt(g.w * g.h) for g in gt])
    return float(np.mean([(norm <= t).mean() for t in NORM_PRECISION_THRESHOLDS]))


def evaluate_sequence(pred: list[Box], gt: list[Box]) -> Metrics:
    return Metrics(
        auc=success_auc(pred, gt),
        precision=precision(pred, gt),
        norm_precision=norm_precision(pred, gt),
    )


def evaluate_results(data_dir, results_dir) -> list[tuple[str, Metrics]]:
    """Pair every dataset sequence with its result file and score it."""
    results_dir = Path(results_dir)
    rows: list[tuple[str, Metrics]] = []
    for seq_dir in list_sequence_dirs(data_dir):
        result_file = results_dir / f"{seq_dir.name}.txt"
        if not result_file.exists():
            raise FileNotFoundError(f"result file not found: {result_file}")
        pred = read_boxes(result_file)
        gt = read_boxes(seq_dir / "groundtruth.txt")
        rows.append((seq_dir.name, evaluate_sequence(pred, gt)))
    return rows


def aggregate(rows: list[tuple[str, Metrics]]) -> Metrics:
    if not rows:
        raise ValueError("no sequences to aggregate")
    return Metrics(
        auc=float(np.mean([m.auc for _, m in rows])),
        precision=float(np.mean([m.precision for _, m in rows])),
        norm_precision=float(np.mean([m.norm_precision for _, m in rows])),
    )


def write_report(path, rows: list[tuple[str, Metrics]]) -> Metrics:
    """CSV report: one row per sequence plus an aggregate ALL row."""
    overall = aggregate(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "auc", "precision", "norm_precision"])
        for name, m in rows:
            writer.writerow([name, f"{m.auc:.6f}", f"{m.precision:.6f}", f"{m.norm_precision:.6f}"])
        writer.writerow(["ALL", f"{overall.auc:.6f}", f"{overall.precision:.6f}", f"{overall.norm_precision:.6f}"])
    return overall
