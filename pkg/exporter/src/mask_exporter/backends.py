"""Detection backends: a pretrained Mask R-CNN and an offline stub."""

from typing import NamedTuple

import numpy as np


class BackendError(Exception):
    """Raised when a detector cannot be constructed or loaded."""


class RawDetection(NamedTuple):
    class_label: str
    confidence: float
    box_xyxy: tuple  # floats, full-image coordinates
    soft_mask: np.ndarray  # (H, W) float in [0, 1], full image


class TorchvisionBackend:
    """Mask R-CNN (ResNet-50 FPN) pretrained on COCO, CPU inference.

    Inference runs in eval mode under no_grad with a fixed torch seed, so
    repeated exports of the same frames produce identical records.
    """

    def __init__(self, weights_path=None):
        try:
            import torch
            from torchvision.models.detection import (
                MaskRCNN_ResNet50_FPN_Weights,
                maskrcnn_resnet50_fpn,
            )

            weights = MaskRCNN_ResNet50_FPN_Weights.COCO_V1
            if weights_path is None:
                model = maskrcnn_resnet50_fpn(weights=weights)
            else:
                model = maskrcnn_resnet50_fpn(weights=None)
                state = torch.load(weights_path, map_location="cpu")
                model.load_state_dict(state)
        except Exception as exc:
            raise BackendError(f"could not load detector weights: {exc}") from exc
        torch.manual_seed(0)
        model.eval()
        self._torch = torch
        self._model = model
        self._categories = list(weights.meta["categories"])

    def detect(self, frames):
        """RGB uint8 frames -> one RawDetection list per frame."""
        torch = self._torch
        tensors = [
            torch.from_numpy(np.ascontiguousarray(f)).permute(2, 0, 1).float() / 255.0
            for f in frames
        ]
        with torch.no_grad():
            outputs = self._model(tensors)
        per_frame = []
        for out in outputs:
            dets = []
            for label, score, box, mask in zip(
                out["labels"], out["scores"], out["boxes"], out["masks"]
            ):
                dets.append(RawDetection(
                    class_label=self._categories[int(label)],
                    confidence=float(score),
                    box_xyxy=tuple(float(v) for v in box),
                    soft_mask=mask[0].numpy(),
                ))
            per_frame.append(dets)
        return per_frame


def _ellipse_soft_mask(height, width, box):
    """Radial soft mask peaking at the box center, zero outside it."""
    x0, y0, x1, y1 = box
    mask = np.zeros((height, width), dtype=np.float32)
    ys = np.arange(int(y0), int(y1))
    xs = np.arange(int(x0), int(x1))
    if ys.size == 0 or xs.size == 0:
        return mask
    cy, cx = (y0 + y1) / 2.0, (x0 + x1) / 2.0
    ry, rx = max((y1 - y0) / 2.0, 1.0), max((x1 - x0) / 2.0, 1.0)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    r2 = ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2
    mask[int(y0):int(y1), int(x0):int(x1)] = np.clip(1.0 - r2, 0.0, 1.0)
    return mask


class StubBackend:
    """Deterministic synthetic detections for offline pipeline testing.

    Every frame yields the same slate scaled to the frame size: allow-listed
    classes above, at, and below the default confidence threshold plus a
    high-confidence class outside the allow-list, so threshold and class
    filtering are both exercised without a real model.
    """

    SLATE = (
        # class, confidence, box as fractions of (W, H)
        ("cup", 0.90, (0.10, 0.20, 0.30, 0.60)),
        ("book", 0.55, (0.40, 0.30, 0.60, 0.70)),
        ("wine glass", 0.40, (0.70, 0.15, 0.90, 0.55)),
        ("bottle", 0.30, (0.15, 0.65, 0.30, 0.95)),
        ("person", 0.99, (0.05, 0.05, 0.95, 0.95)),
    )

    def detect(self, frames):
        per_frame = []
        for frame in frames:
            h, w = frame.shape[:2]
            dets = []
            for label, conf, (fx0, fy0, fx1, fy1) in self.SLATE:
                box = (fx0 * w, fy0 * h, fx1 * w, fy1 * h)
                dets.append(RawDetection(
                    class_label=label,
                    confidence=conf,
                    box_xyxy=box,
                    soft_mask=_ellipse_soft_mask(h, w, box),
                ))
            per_frame.append(dets)
        return per_frame
