"""Domain records, on-disk dataset formats, and min-max normalization.

A recording lives in its own directory:

    <dir>/meta.txt          key=value lines: id, width, height, class, mass_g (or NA)
    <dir>/rgb/%06d.png      8-bit RGB frames
    <dir>/depth/%06d.png    16-bit grayscale, integer millimeters, 0 = missing

Detector output for a recording is a detections.jsonl file, one JSON object
per line with keys frame, class, score, bbox=[x,y,w,h], rle=[r1,r2,...] and
img=[W,H].  The RLE is row-major within the bbox and starts with a
background run.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np


class DataError(Exception):
    """Malformed or inconsistent on-disk data."""


# COCO classes kept at ingestion, case-sensitive.
ALLOWED_DETECTION_CLASSES = ("cup", "book", "wine glass", "bottle")

CONTAINER_CLASSES = ("cup", "glass", "box", "unknown")

# Container category -> COCO detector class it typically surfaces as.
CATEGORY_TO_DETECTION = {"cup": "cup", "glass": "wine glass", "box": "book"}

PATCH_SIZE = 112


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class DetectionRecord:
    frame_index: int
    class_label: str
    confidence: float
    bbox: tuple[int, int, int, int]  # x, y, w, h in pixels
    rle: tuple[int, ...]  # row-major within bbox, leading background run
    image_size: tuple[int, int]  # W, H

    def decode_mask(self) -> np.ndarray:
        """Decode the RLE into an (h, w) boolean mask over the bbox."""
        _, _, w, h = self.bbox
        return rle_decode(self.rle, w, h)


@dataclass(frozen=True)
class RecordingBundle:
    recording_id: str
    rgb_frames: tuple[np.ndarray, ...]  # each (H, W, 3) uint8, RGB order
    depth_frames: tuple[np.ndarray, ...]  # each (H, W) uint16 millimeters
    width: int
    height: int
    container_class: str
    true_mass: float | None  # grams; None for unlabeled data

    def __post_init__(self):
        if len(self.rgb_frames) != len(self.depth_frames):
            raise DataError(
                f"recording {self.recording_id}: {len(self.rgb_frames)} rgb frames "
                f"vs {len(self.depth_frames)} depth frames"
            )
        if self.container_class not in CONTAINER_CLASSES:
            raise DataError(f"unknown container class {self.container_class!r}")
        if self.true_mass is not None and not self.true_mass > 0:
            raise DataError(f"true_mass must be positive, got {self.true_mass}")

    @property
    def n_frames(self) -> int:
        return len(self.rgb_frames)


@dataclass(frozen=True)
class Candidate:
    """A selected container patch with its scalar side features."""

    recording_id: str
    frame_index: int
    bbox: tuple[int, int, int, int]
    patch: np.ndarray  # (112, 112, 3) float32 in [0, 1]
    a: float  # bbox width / image width
    b: float  # bbox height / image height
    d: float  # average mask distance, meters


@dataclass(frozen=True)
class MassPrediction:
    recording_id: str
    estimate: float | None  # grams; None when no candidates were found
    candidate_count: int

    def __post_init__(self):
        if (self.estimate is None) != (self.candidate_count == 0):
            raise DataError(
                f"{self.recording_id}: estimate must be absent exactly when "
                f"candidate_count is 0"
            )


# ---------------------------------------------------------------------------
# min-max normalization

QUANTITIES = ("a", "b", "d", "mass")

_STATS_KEYS = (
    "a_min", "a_max", "b_min", "b_max", "d_min", "d_max", "m_min", "m_max",
)


@dataclass(frozen=True)
class NormStats:
    """Per-quantity training-set minima and maxima."""

    a_min: float
    a_max: float
    b_min: float
    b_max: float
    d_min: float
    d_max: float
    m_min: float
    m_max: float

    def __post_init__(self):
        for q in QUANTITIES:
            lo, hi = self.range(q)
            if lo > hi:
                raise DataError(f"stats for {q!r}: min {lo} > max {hi}")

    def range(self, quantity: str) -> tuple[float, float]:
        if quantity not in QUANTITIES:
            raise DataError(f"unknown quantity {quantity!r}")
        key = "m" if quantity == "mass" else quantity
        return getattr(self, f"{key}_min"), getattr(self, f"{key}_max")


def normalize(value: float, quantity: str, stats: NormStats) -> float:
    """(value - min) / (max - min); a degenerate range maps to 0.

    Values outside [min, max] are not clamped, so inference-time inputs may
    leave [0, 1].
    """
    lo, hi = stats.range(quantity)
    if hi == lo:
        return 0.0
    return (value - lo) / (hi - lo)


def denormalize(value: float, quantity: str, stats: NormStats) -> float:
    lo, hi = stats.range(quantity)
    return lo + value * (hi - lo)


def save_norm_stats(stats: NormStats, path) -> None:
    lines = [f"{k}={getattr(stats, k)!r}\n" for k in _STATS_KEYS]
    Path(path).write_text("".join(lines))


def load_norm_stats(path) -> NormStats:
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        if key not in _STATS_KEYS:
            raise DataError(f"{path}: unknown stats key {key!r}")
        fields[key] = float(value)
    missing = [k for k in _STATS_KEYS if k not in fields]
    if missing:
        raise DataError(f"{path}: missing stats keys {missing}")
    return NormStats(**fields)


# ---------------------------------------------------------------------------
# run-length masks


def rle_decode(runs, w: int, h: int) -> np.ndarray:
    """Decode alternating background/foreground runs into an (h, w) bool mask."""
    runs = np.asarray(runs, dtype=np.int64)
    if runs.size and runs.min() < 0:
        raise DataError("negative run length")
    if runs.sum() != w * h:
        raise DataError(f"RLE runs sum to {runs.sum()}, expected {w * h}")
    values = np.zeros(runs.size, dtype=bool)
    values[1::2] = True
    return np.repeat(values, runs).reshape(h, w)


def rle_encode(mask: np.ndarray) -> list[int]:
    """Inverse of rle_decode: row-major runs starting with background."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:  # must start with a background run
        runs = [0] + runs
    return [int(r) for r in runs]


# ---------------------------------------------------------------------------
# recording directory I/O


def _read_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        meta[key] = value
    for key in ("id", "width", "height", "class"):
        if key not in meta:
            raise DataError(f"{path}: missing meta key {key!r}")
    return meta


def _load_frame_dir(dirpath: Path, n: int | None, kind: str):
    files = sorted(dirpath.glob("*.png")) if dirpath.is_dir() else []
    count = len(files) if n is None else n
    frames = []
    for i in range(count):
        p = dirpath / f"{i:06d}.png"
        if not p.exists():
            raise DataError(f"{dirpath.parent.name}: {kind} frame {i} missing")
        flag = cv2.IMREAD_COLOR if kind == "rgb" else cv2.IMREAD_UNCHANGED
        img = cv2.imread(str(p), flag)
        if img is None:
            raise DataError(f"{dirpath.parent.name}: {kind} frame {i} unreadable")
        frames.append(img)
    if n is None and len(files) != count:
        raise DataError(f"{dirpath}: stray non-sequential frame files")
    return frames


def load_recording(path) -> RecordingBundle:
    """Load a recording directory into memory; depth stays raw millimeters."""
    root = Path(path)
    meta = _read_meta(root / "meta.txt")
    width, height = int(meta["width"]), int(meta["height"])
    mass = None if meta.get("mass_g", "NA") == "NA" else float(meta["mass_g"])

    rgb = _load_frame_dir(root / "rgb", None, "rgb")
    depth = _load_frame_dir(root / "depth", len(rgb), "depth")
    if len(sorted((root / "depth").glob("*.png"))) != len(rgb):
        raise DataError(f"{root.name}: rgb/depth frame counts differ")

    rgb_frames = []
    for i, img in enumerate(rgb):
        if img.shape[:2] != (height, width):
            raise DataError(
                f"{root.name}: rgb frame {i} is {img.shape[1]}x{img.shape[0]}, "
                f"expected {width}x{height}"
            )
        rgb_frames.append(np.ascontiguousarray(img[:, :, ::-1]))  # BGR -> RGB
    depth_frames = []
    for i, img in enumerate(depth):
        if img.ndim != 2 or img.dtype != np.uint16:
            raise DataError(f"{root.name}: depth frame {i} is not 16-bit grayscale")
        if img.shape != (height, width):
            raise DataError(
                f"{root.name}: depth frame {i} is {img.shape[1]}x{img.shape[0]}, "
                f"expected {width}x{height}"
            )
        depth_frames.append(img)

    return RecordingBundle(
        recording_id=meta["id"],
        rgb_frames=tuple(rgb_frames),
        depth_frames=tuple(depth_frames),
        width=width,
        height=height,
        container_class=meta["class"],
        true_mass=mass,
    )


def save_recording(bundle: RecordingBundle, path) -> None:
    root = Path(path)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    mass = "NA" if bundle.true_mass is None else repr(bundle.true_mass)
    (root / "meta.txt").write_text(
        f"id={bundle.recording_id}\n"
        f"width={bundle.width}\n"
        f"height={bundle.height}\n"
        f"class={bundle.container_class}\n"
        f"mass_g={mass}\n"
    )
    for i, frame in enumerate(bundle.rgb_frames):
        ok = cv2.imwrite(str(root / "rgb" / f"{i:06d}.png"), frame[:, :, ::-1])
        if not ok:
            raise DataError(f"failed to write rgb frame {i}")
    for i, frame in enumerate(bundle.depth_frames):
        ok = cv2.imwrite(str(root / "depth" / f"{i:06d}.png"), frame)
        if not ok:
            raise DataError(f"failed to write depth frame {i}")


# ---------------------------------------------------------------------------
# detection file I/O


@dataclass(frozen=True)
class DetectionSet:
    """Detections of one recording grouped by frame index."""

    by_frame: dict[int, tuple[DetectionRecord, ...]]
    dropped_classes: int  # records rejected by the class allow-list

    def all_records(self) -> list[DetectionRecord]:
        out = []
        for idx in sorted(self.by_frame):
            out.extend(self.by_frame[idx])
        return out


def load_detections(path) -> DetectionSet:
    """Parse a detections.jsonl file, filtering to the allowed classes."""
    by_frame: dict[int, list[DetectionRecord]] = {}
    dropped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = DetectionRecord(
                    frame_index=int(obj["frame"]),
                    class_label=str(obj["class"]),
                    confidence=float(obj["score"]),
                    bbox=tuple(int(v) for v in obj["bbox"]),
                    rle=tuple(int(v) for v in obj["rle"]),
                    image_size=tuple(int(v) for v in obj["img"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if rec.class_label not in ALLOWED_DETECTION_CLASSES:
                dropped += 1
                continue
            x, y, w, h = rec.bbox
            if sum(rec.rle) != w * h:
                raise DataError(
                    f"{path}:{lineno}: RLE runs sum to {sum(rec.rle)}, "
                    f"expected {w * h}"
                )
            iw, ih = rec.image_size
            if x + w <= 0 or y + h <= 0 or x >= iw or y >= ih:
                raise DataError(f"{path}:{lineno}: bbox outside the image")
            by_frame.setdefault(rec.frame_index, []).append(rec)
    frozen = {k: tuple(v) for k, v in by_frame.items()}
    return DetectionSet(by_frame=frozen, dropped_classes=dropped)


def detection_to_json(rec: DetectionRecord) -> str:
    return json.dumps(
        {
            "frame": rec.frame_index,
            "class": rec.class_label,
            "score": rec.confidence,
            "bbox": list(rec.bbox),
            "rle": list(rec.rle),
            "img": list(rec.image_size),
        },
        separators=(", ", ": "),
    )


def save_detections(records, path) -> None:
    """Write detection records (any iterable, kept in frame order) as jsonl."""
    recs = sorted(records, key=lambda r: (r.frame_index,))
    with open(path, "w") as fh:
        for rec in recs:
            fh.write(detection_to_json(rec) + "\n")
