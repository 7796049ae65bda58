"""Synthetic RGB-D benchmark with planted containers and a known mass law.

Each recording plants one to three flat-colored shapes (box = rectangle,
cup = trapezoid, glass = bowl/stem/base stack) on a black background at
4 m.  The nearest planted container is the ground-truth target and its mass
follows a linear law over quantities the pipeline can observe exactly:

    mass = w0 + w1 * L + w2 * a + w3 * b + w4 * d  (+ gaussian noise)

where L is the fill color's luma in [0, 1], a and b are the rasterized
bbox fractions of the image dims, and d is the planted distance in meters
(realized at millimeter precision, matching the depth map).  With zero
noise the law never touches the [10, 500] g clip, so a linear model on
(L, a, b, d) recovers it exactly.
"""

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .data import (
    CATEGORY_TO_DETECTION,
    DataError,
    DetectionRecord,
    RecordingBundle,
    rle_encode,
    save_detections,
    save_recording,
)
from .evaluation import save_catalog, save_truth
from .patchops import LUMA_WEIGHTS

CATEGORIES = ("box", "cup", "glass")

_REC_STREAM = 53281  # rng namespace tags, kept distinct from augmentation's
_POOL_STREAM = 53282


@dataclass(frozen=True)
class SynthSpec:
    recordings: int = 30
    width: int = 1280
    height: int = 720
    frames: int = 1
    containers_per_frame: int = 1
    instance_pool: int = 0  # 0: every recording gets its own container identity
    distance_min: float = 0.6
    distance_max: float = 2.4
    size_min: float = 0.10
    size_max: float = 0.35
    luma_min: float = 0.25
    luma_max: float = 0.95
    noise_sigma: float = 0.0
    missing_depth: float = 0.05
    mass_coeffs: tuple = (50.0, 200.0, 100.0, 100.0, -30.0)
    mass_clip: tuple = (10.0, 500.0)
    background_mm: int = 4000
    seed: int = 0

    def __post_init__(self):
        if self.recordings < 1:
            raise DataError("recordings must be >= 1")
        if self.width < 64 or self.height < 64:
            raise DataError("image dims must be at least 64x64")
        if self.frames < 1:
            raise DataError("frames must be >= 1")
        if not 1 <= self.containers_per_frame <= 3:
            raise DataError("containers_per_frame must be in 1..3")
        if self.instance_pool < 0:
            raise DataError("instance_pool must be >= 0")
        if not 0.0 < self.distance_min <= self.distance_max:
            raise DataError("bad distance range")
        if not 0.0 < self.size_min <= self.size_max < 1.0:
            raise DataError("size fractions must lie in (0, 1)")
        if not 0.0 <= self.luma_min <= self.luma_max <= 1.0:
            raise DataError("luma bounds must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise DataError("noise sigma must be >= 0")
        if not 0.0 <= self.missing_depth < 1.0:
            raise DataError("missing-depth fraction must be in [0, 1)")
        if len(self.mass_coeffs) != 5:
            raise DataError("mass law needs 5 coefficients")
        if not 0 < self.mass_clip[0] < self.mass_clip[1]:
            raise DataError("bad mass clip range")


def _luma01(color) -> float:
    r, g, b = (float(c) for c in color)
    return (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b) / 255.0


def _draw_color(rng, spec: SynthSpec):
    while True:
        c = tuple(int(v) for v in rng.integers(0, 256, size=3))
        if spec.luma_min <= _luma01(c) <= spec.luma_max:
            return c


def _shape_mask(category: str, w_px: int, h_px: int) -> np.ndarray:
    """Binary uint8 mask of the shape on its own (h_px, w_px) canvas."""
    m = np.zeros((h_px, w_px), dtype=np.uint8)
    if category == "box":
        m[:, :] = 1
    elif category == "cup":
        bot = max(2, int(round(w_px * 0.6)))
        lo = (w_px - bot) // 2
        pts = np.array(
            [[0, 0], [w_px - 1, 0], [lo + bot - 1, h_px - 1], [lo, h_px - 1]],
            dtype=np.int32,
        )
        cv2.fillConvexPoly(m, pts, 1)
    elif category == "glass":
        cx = w_px // 2
        bowl_h = max(2, int(round(h_px * 0.55)))
        cv2.ellipse(
            m, (cx, bowl_h // 2), (w_px // 2 - 1, bowl_h // 2), 0, 0, 360, 1, -1
        )
        stem_w = max(1, w_px // 10)
        m[bowl_h // 2 : int(h_px * 0.92), cx - stem_w // 2 : cx - stem_w // 2 + stem_w] = 1
        cv2.ellipse(
            m,
            (cx, int(h_px * 0.92)),
            (max(2, w_px // 3), max(1, int(h_px * 0.08))),
            0, 0, 360, 1, -1,
        )
    else:
        raise DataError(f"unknown synthetic category {category!r}")
    if not m.any():
        raise DataError(f"degenerate {category} mask at {w_px}x{h_px}")
    return m


def _tight_crop(mask: np.ndarray):
    """(cropped mask, x_off, y_off) of the nonzero extent."""
    ys, xs = np.nonzero(mask)
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    return mask[y0:y1, x0:x1], x0, y0


@dataclass(frozen=True)
class _Instance:
    instance_id: str
    category: str
    color: tuple  # RGB uint8
    w_px: int
    h_px: int


def _make_instance(instance_id, category, rng, spec: SynthSpec,
                   max_w_px: int) -> _Instance:
    color = _draw_color(rng, spec)
    w_px = int(round(rng.uniform(spec.size_min, spec.size_max) * spec.width))
    h_px = int(round(rng.uniform(spec.size_min, spec.size_max) * spec.height))
    w_px = max(8, min(w_px, max_w_px))
    h_px = max(8, min(h_px, spec.height - 4))
    return _Instance(instance_id, category, color, w_px, h_px)


def _mass_of(spec: SynthSpec, luma: float, a: float, b: float, d: float,
             noise: float) -> float:
    w0, w1, w2, w3, w4 = spec.mass_coeffs
    raw = w0 + w1 * luma + w2 * a + w3 * b + w4 * d + noise
    return float(min(max(raw, spec.mass_clip[0]), spec.mass_clip[1]))


def generate(spec: SynthSpec, out_dir) -> dict:
    """Write recordings, detections, truth.csv, and catalog.csv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    n_containers = spec.containers_per_frame
    band_w = spec.width // n_containers
    max_w_px = band_w - 4

    pool = {}
    if spec.instance_pool > 0:
        pool_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((spec.seed, 0, _POOL_STREAM)))
        )
        for cat in CATEGORIES:
            pool[cat] = [
                _make_instance(f"{cat}-{i}", cat, pool_rng, spec, max_w_px)
                for i in range(spec.instance_pool)
            ]

    truth_rows, catalog_rows, rec_ids = [], [], []
    for r in range(spec.recordings):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((spec.seed, r, _REC_STREAM)))
        )
        rid = f"synth{r:04d}"
        target_cat = CATEGORIES[r % len(CATEGORIES)]
        if pool:
            target_inst = pool[target_cat][(r // len(CATEGORIES)) % spec.instance_pool]
        else:
            target_inst = _make_instance(f"inst-{rid}", target_cat, rng, spec, max_w_px)

        # Container roster: target plus distractors, distances distinct at
        # millimeter precision so "nearest" is unambiguous.
        containers = [target_inst]
        for j in range(1, n_containers):
            cat = CATEGORIES[(r + j) % len(CATEGORIES)]
            if pool:
                inst = pool[cat][rng.integers(0, spec.instance_pool)]
            else:
                inst = _make_instance(f"inst-{rid}-x{j}", cat, rng, spec, max_w_px)
            containers.append(inst)
        d_mms = []
        for _ in containers:
            while True:
                mm = int(round(rng.uniform(spec.distance_min, spec.distance_max) * 1000))
                if mm not in d_mms:
                    d_mms.append(mm)
                    break
        nearest = int(np.argmin(d_mms))
        if nearest != 0:  # keep the target the nearest container
            d_mms[0], d_mms[nearest] = d_mms[nearest], d_mms[0]

        noise = float(rng.normal(0.0, spec.noise_sigma)) if spec.noise_sigma > 0 else 0.0

        rgb_frames, depth_frames, det_records = [], [], []
        realized = {}  # container index -> (a, b)
        for f in range(spec.frames):
            rgb = np.zeros((spec.height, spec.width, 3), dtype=np.uint8)
            depth = np.full(
                (spec.height, spec.width), spec.background_mm, dtype=np.uint16
            )
            order = sorted(range(len(containers)), key=lambda i: -d_mms[i])
            for i in order:
                inst = containers[i]
                mask, x_off, y_off = _tight_crop(
                    _shape_mask(inst.category, inst.w_px, inst.h_px)
                )
                bh, bw = mask.shape
                band_lo = i * band_w
                x_hi = band_lo + band_w - bw - 2
                x0 = int(rng.integers(band_lo + 2, max(x_hi, band_lo + 3)))
                x0 = min(x0, spec.width - bw - 1)
                y0 = int(rng.integers(2, max(spec.height - bh - 2, 3)))
                y0 = min(y0, spec.height - bh - 1)
                region = (slice(y0, y0 + bh), slice(x0, x0 + bw))
                sel = mask > 0
                rgb[region][sel] = np.array(inst.color, dtype=np.uint8)
                depth[region][sel] = d_mms[i]
                realized[i] = (bw / spec.width, bh / spec.height)
                det_records.append(
                    DetectionRecord(
                        frame_index=f,
                        class_label=CATEGORY_TO_DETECTION[inst.category],
                        confidence=float(rng.uniform(0.5, 0.99)),
                        bbox=(x0, y0, bw, bh),
                        rle=tuple(rle_encode(sel)),
                        image_size=(spec.width, spec.height),
                    )
                )
            if spec.missing_depth > 0:
                drop = rng.random(depth.shape) < spec.missing_depth
                depth[drop] = 0
            rgb_frames.append(rgb)
            depth_frames.append(depth)

        a, b = realized[0]
        mass = _mass_of(spec, _luma01(target_inst.color), a, b, d_mms[0] / 1000.0, noise)
        bundle = RecordingBundle(
            recording_id=rid,
            rgb_frames=tuple(rgb_frames),
            depth_frames=tuple(depth_frames),
            width=spec.width,
            height=spec.height,
            container_class=target_inst.category,
            true_mass=mass,
        )
        save_recording(bundle, out / rid)
        save_detections(det_records, out / rid / "detections.jsonl")
        truth_rows.append((rid, mass, target_inst.category))
        catalog_rows.append((target_inst.instance_id, target_inst.category, rid))
        rec_ids.append(rid)

    save_truth(out / "truth.csv", truth_rows)
    save_catalog(out / "catalog.csv", catalog_rows)
    return {
        "recordings": len(rec_ids),
        "recording_ids": rec_ids,
        "out_dir": str(out),
        "categories": {
            cat: sum(1 for _, _, c in truth_rows if c == cat) for cat in CATEGORIES
        },
    }
