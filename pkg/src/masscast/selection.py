"""Average mask distance per detection and K-nearest candidate selection.

"Nearest" is taken globally across all frames of a recording, so the K
candidates may all come from one frame.  Missing depth (raw value 0) is
excluded from the distance mean; a detection whose mask has too few valid
depth pixels contributes no candidate at all.
"""

import heapq
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .data import Candidate, DetectionRecord, DetectionSet, RecordingBundle
from .patchops import compute_aspect_ratios, crop_pad_resize

MM_PER_METER = 1000.0


@dataclass(frozen=True)
class SelectionConfig:
    k_max: int = 5
    frame_stride: int = 1
    min_valid_depth_fraction: float = 0.1

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")
        if not 0.0 <= self.min_valid_depth_fraction <= 1.0:
            raise ValueError("min_valid_depth_fraction must lie in [0, 1]")


class ScoredDetection(NamedTuple):
    detection: DetectionRecord
    distance: float  # meters


def clip_bbox(bbox, width: int, height: int):
    """Clip an (x, y, w, h) bbox to image bounds; None if nothing remains."""
    x, y, w, h = bbox
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, width), min(y + h, height)
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def average_mask_distance(
    depth_m: np.ndarray,
    detection: DetectionRecord,
    min_valid_fraction: float = 0.1,
) -> float | None:
    """Mean depth (meters) over mask-foreground pixels, skipping missing ones.

    Returns None when the clipped mask is empty or fewer than
    min_valid_fraction of its pixels carry valid depth.
    """
    height, width = depth_m.shape
    clipped = clip_bbox(detection.bbox, width, height)
    if clipped is None:
        return None
    mask = detection.decode_mask()
    x, y, w, h = detection.bbox
    cx, cy, cw, ch = clipped
    mask = mask[cy - y : cy - y + ch, cx - x : cx - x + cw]
    area = int(mask.sum())
    if area == 0:
        return None
    values = depth_m[cy : cy + ch, cx : cx + cw][mask]
    values = values[values > 0]
    if values.size < min_valid_fraction * area:
        return None
    return float(values.mean())


def _order_key(entry: ScoredDetection):
    det = entry.detection
    # Ties break by frame index, then bbox fields, so the ordering is total
    # and selection is invariant to the input permutation.
    return (entry.distance, det.frame_index, *det.bbox)


def select_k_nearest(scored, config: SelectionConfig) -> list[ScoredDetection]:
    """Keep the k_max smallest-distance detections, deterministically ordered."""
    return heapq.nsmallest(config.k_max, scored, key=_order_key)


def extract_candidates(
    bundle: RecordingBundle,
    detections: DetectionSet,
    config: SelectionConfig | None = None,
    patch_fn: Callable[[np.ndarray, tuple], np.ndarray] = crop_pad_resize,
) -> list[Candidate]:
    """Run distance scoring and K-nearest selection over a whole recording."""
    if config is None:
        config = SelectionConfig()
    scored: list[ScoredDetection] = []
    for frame_index in range(0, bundle.n_frames, config.frame_stride):
        frame_dets = detections.by_frame.get(frame_index, ())
        if not frame_dets:
            continue
        depth_m = bundle.depth_frames[frame_index].astype(np.float64) / MM_PER_METER
        for det in frame_dets:
            d = average_mask_distance(depth_m, det, config.min_valid_depth_fraction)
            if d is not None:
                scored.append(ScoredDetection(det, d))

    candidates = []
    for det, distance in select_k_nearest(scored, config):
        bbox = clip_bbox(det.bbox, bundle.width, bundle.height)
        patch = patch_fn(bundle.rgb_frames[det.frame_index], bbox)
        a, b = compute_aspect_ratios(bbox, (bundle.width, bundle.height))
        candidates.append(
            Candidate(
                recording_id=bundle.recording_id,
                frame_index=det.frame_index,
                bbox=bbox,
                patch=patch,
                a=a,
                b=b,
                d=distance,
            )
        )
    return candidates
