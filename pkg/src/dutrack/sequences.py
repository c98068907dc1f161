"""Sequence container and the on-disk dataset layout.

    <seq>/img/%08d.ppm       binary PPM (P6, maxval 255)
    <seq>/groundtruth.txt    one "x,y,w,h" line per frame
    <seq>/nlp.txt            single-line initial description
    <seq>/category.txt       single word

Real data folders with the same layout load through the same reader.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import Box


@dataclass
class Sequence:
    name: str
    frames: list[np.ndarray]  # uint8 HxWx3
    boxes: list[Box]
    category: str
    description: str

    def __post_init__(self):
        if len(self.frames) != len(self.boxes):
            raise ValueError(
                f"sequence '{self.name}': {len(self.frames)} frames vs {len(self.boxes)} boxes"
            )

    def __len__(self) -> int:
        return len(self.frames)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("write_ppm expects a uint8 HxWx3 raster")
    h, w = img.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster not found: {path}")
    blob = path.read_bytes()

    # Header: magic, width, height, maxval separated by whitespace, then one
    # whitespace byte before the pixel data.
    fields: list[bytes] = []
    off = 0
    while len(fields) < 4:
        while off < len(blob) and blob[off : off + 1].isspace():
            off += 1
        if off < len(blob) and blob[off : off + 1] == b"#":
            while off < len(blob) and blob[off] != 0x0A:
                off += 1
            continue
        start = off
        while off < len(blob) and not blob[off : off + 1].isspace():
            off += 1
        if start == off:
            raise ValueError(f"{path}: truncated header at byte {off}")
        fields.append(blob[start:off])
    off += 1  # single whitespace after maxval

    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    expected = w * h * 3
    data = blob[off : off + expected]
    if len(data) != expected:
        raise ValueError(
            f"{path}: truncated raster, expected {expected} bytes at byte {off}, got {len(data)}"
        )
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def write_boxes(path, boxes: list[Box]) -> None:
    lines = [",".join(_fmt(v) for v in b.as_tuple()) for b in boxes]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_boxes(path) -> list[Box]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ground-truth file not found: {path}")
    boxes = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'x,y,w,h', got {line!r}")
        try:
            boxes.append(Box.from_iterable(parts))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return boxes


def write_sequence(seq: Sequence, directory) -> None:
    directory = Path(directory)
    img_dir = directory / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_ppm(img_dir / f"{i:08d}.ppm", frame)
    write_boxes(directory / "groundtruth.txt", seq.boxes)
    (directory / "nlp.txt").write_text(seq.description + "\n", encoding="utf-8")
    (directory / "category.txt").write_text(seq.category + "\n", encoding="utf-8")


def read_sequence(directory) -> Sequence:
    directory = Path(directory)
    img_dir = directory / "img"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"image directory not found: {img_dir}")
    frame_paths = sorted(img_dir.glob("*.ppm"))
    if not frame_paths:
        raise FileNotFoundError(f"no .ppm frames under {img_dir}")
    frames = [read_ppm(p) for p in frame_paths]
    boxes = read_boxes(directory / "groundtruth.txt")
    if len(boxes) != len(frames):
        raise ValueError(
            f"{directory}: {len(frames)} frames but {len(boxes)} ground-truth boxes"
        )
    nlp_path = directory / "nlp.txt"
    description = nlp_path.read_text(encoding="utf-8").strip() if nlp_path.exists() else ""
    cat_path = directory / "category.txt"
    category = cat_path.read_text(encoding="utf-8").strip() if cat_path.exists() else "object"
    return Sequence(directory.name, frames, boxes, category, description)


def list_sequence_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if (p / "img").is_dir())
    if not dirs:
        raise FileNotFoundError(f"no sequence directories under {root}")
    return dirs
