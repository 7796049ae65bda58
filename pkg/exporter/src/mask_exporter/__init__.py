"""Instance-segmentation export to the detections.jsonl wire format."""

from .backends import BackendError, RawDetection, StubBackend, TorchvisionBackend
from .export import DEFAULT_CLASSES, DEFAULT_THRESHOLD, ExportConfig, ExportSummary, export, rle_encode

__all__ = [
    "BackendError",
    "RawDetection",
    "StubBackend",
    "TorchvisionBackend",
    "DEFAULT_CLASSES",
    "DEFAULT_THRESHOLD",
    "ExportConfig",
    "ExportSummary",
    "export",
    "rle_encode",
]
