"""Run a detection backend over a clip and write detections.jsonl.

The output format is one JSON object per line with keys frame/class/score/
bbox/rle/img: bbox is integer (x, y, w, h), rle is a row-major run-length
encoding of the binarized mask within the bbox starting with a background
run, img is (W, H).  Records are written in frame order.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

log = logging.getLogger("mask_exporter")

DEFAULT_THRESHOLD = 0.4
DEFAULT_CLASSES = ("cup", "book", "wine glass", "bottle")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
MASK_BINARIZE_AT = 0.5


@dataclass(frozen=True)
class ExportConfig:
    input_path: Path
    output_path: Path
    threshold: float = DEFAULT_THRESHOLD
    allowed_classes: tuple = DEFAULT_CLASSES
    frame_stride: int = 1
    batch_size: int = 2

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in (0, 1], got {self.threshold}")
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.allowed_classes:
            raise ValueError("allowed_classes must not be empty")


@dataclass
class ExportSummary:
    frames_read: int = 0
    frames_skipped: int = 0
    records: int = 0
    dropped_class: int = 0
    dropped_score: int = 0


def rle_encode(mask: np.ndarray) -> list:
    """Row-major alternating run lengths, starting with a background run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return [0]
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def _iter_image_dir(path: Path):
    files = sorted(
        p for p in path.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not files:
        raise ValueError(f"{path}: no image files found")
    for idx, p in enumerate(files):
        bgr = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if bgr is None:
            log.warning("%s: unreadable frame, skipping", p)
            yield idx, None
        else:
            yield idx, cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def _iter_video(path: Path):
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ValueError(f"{path}: could not open video")
    idx = 0
    try:
        while True:
            ok, bgr = cap.read()
            if not ok:
                break
            yield idx, cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
            idx += 1
    finally:
        cap.release()


def iter_frames(path):
    """Yield (frame_index, rgb-or-None) from a frame directory or video."""
    path = Path(path)
    if path.is_dir():
        yield from _iter_image_dir(path)
    elif path.is_file():
        yield from _iter_video(path)
    else:
        raise ValueError(f"{path}: no such file or directory")


def _clip_box(box_xyxy, width: int, height: int):
    x0 = max(0, int(math.floor(box_xyxy[0])))
    y0 = max(0, int(math.floor(box_xyxy[1])))
    x1 = min(width, int(math.ceil(box_xyxy[2])))
    y1 = min(height, int(math.ceil(box_xyxy[3])))
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1 - x0, y1 - y0


def detection_record(det, frame_index: int, width: int, height: int):
    """One output dict for a surviving detection; None if the box collapses."""
    bbox = _clip_box(det.box_xyxy, width, height)
    if bbox is None:
        return None
    x, y, w, h = bbox
    crop = det.soft_mask[y:y + h, x:x + w]
    runs = rle_encode(crop >= MASK_BINARIZE_AT)
    return {
        "frame": frame_index,
        "class": det.class_label,
        "score": round(float(det.confidence), 6),
        "bbox": [x, y, w, h],
        "rle": runs,
        "img": [width, height],
    }


def export(config: ExportConfig, backend) -> ExportSummary:
    """Detect on every frame_stride-th frame and write surviving records."""
    summary = ExportSummary()
    batch_frames, batch_indices = [], []

    def flush(out):
        if not batch_frames:
            return
        detections = backend.detect(batch_frames)
        for frame, idx, dets in zip(batch_frames, batch_indices, detections):
            height, width = frame.shape[:2]
            for det in dets:
                if det.class_label not in config.allowed_classes:
                    summary.dropped_class += 1
                    continue
                if det.confidence < config.threshold:
                    summary.dropped_score += 1
                    continue
                record = detection_record(det, idx, width, height)
                if record is None:
                    continue
                out.write(json.dumps(record) + "\n")
                summary.records += 1
        batch_frames.clear()
        batch_indices.clear()

    with open(config.output_path, "w") as out:
        for idx, frame in iter_frames(config.input_path):
            if frame is None:
                summary.frames_skipped += 1
                continue
            summary.frames_read += 1
            if idx % config.frame_stride != 0:
                continue
            batch_frames.append(frame)
            batch_indices.append(idx)
            if len(batch_frames) >= config.batch_size:
                flush(out)
        flush(out)
    return summary
