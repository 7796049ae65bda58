"""Patch geometry (crop, square-pad, resize) and training-time augmentation.

Augmentation order is fixed: horizontal flip, vertical flip, rotation with
an expanded canvas (no cropping), brightness, contrast, saturation, hue,
then a resize back to 112x112 and a clamp to [0, 1].  Every parameter is
drawn from a per-sample generator so batches can be augmented in parallel
without sharing an RNG stream.
"""

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .data import PATCH_SIZE

# ITU-R BT.601 luma weights, shared with the synthetic mass law.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class PatchError(Exception):
    """Degenerate crop geometry."""


def compute_aspect_ratios(bbox, image_size) -> tuple[float, float]:
    """a = bbox width / image width, b = bbox height / image height."""
    w_img, h_img = image_size
    x, y, w, h = bbox
    return w / w_img, h / h_img


def crop_pad_resize(image: np.ndarray, bbox) -> np.ndarray:
    """Crop bbox, zero-pad the shorter side to a square, resize to 112x112.

    The bbox must already be clipped to the image.  Padding is symmetric;
    an odd leftover pixel goes to the trailing side.  Returns float32 in
    [0, 1].
    """
    x, y, w, h = (int(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise PatchError(f"degenerate bbox {bbox}")
    if x < 0 or y < 0 or x + w > image.shape[1] or y + h > image.shape[0]:
        raise PatchError(f"bbox {bbox} not clipped to image {image.shape[1::-1]}")
    crop = image[y : y + h, x : x + w]
    side = max(w, h)
    canvas = np.zeros((side, side, 3), dtype=image.dtype)
    px = (side - w) // 2
    py = (side - h) // 2
    canvas[py : py + h, px : px + w] = crop
    if side != PATCH_SIZE:
        canvas = cv2.resize(
            canvas, (PATCH_SIZE, PATCH_SIZE), interpolation=cv2.INTER_LINEAR
        )
    return canvas.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    rotation_deg: tuple[float, float] = (0.0, 180.0)
    brightness: tuple[float, float] = (0.8, 1.2)
    contrast: tuple[float, float] = (0.8, 1.2)
    saturation: tuple[float, float] = (0.8, 1.2)
    hue: tuple[float, float] = (-0.2, 0.2)  # fraction of a full hue turn
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_hflip <= 1.0 or not 0.0 <= self.p_vflip <= 1.0:
            raise ValueError("flip probabilities must lie in [0, 1]")
        for name in ("rotation_deg", "brightness", "contrast", "saturation", "hue"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range {lo}..{hi} is not well-ordered")


IDENTITY_CONFIG = AugmentConfig(
    p_hflip=0.0,
    p_vflip=0.0,
    rotation_deg=(0.0, 0.0),
    brightness=(1.0, 1.0),
    contrast=(1.0, 1.0),
    saturation=(1.0, 1.0),
    hue=(0.0, 0.0),
)


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool
    vflip: bool
    angle_deg: float
    brightness: float
    contrast: float
    saturation: float
    hue: float


def sample_rng(seed: int, sample_index: int, copy_index: int) -> np.random.Generator:
    """Counter-based per-sample generator; reproducible across platforms."""
    ss = np.random.SeedSequence((int(seed), int(sample_index), int(copy_index)))
    return np.random.Generator(np.random.PCG64(ss))


def sample_params(config: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    """Draw one parameter tuple; all draws happen in a fixed order."""
    return AugmentParams(
        hflip=bool(rng.random() < config.p_hflip),
        vflip=bool(rng.random() < config.p_vflip),
        angle_deg=float(rng.uniform(*config.rotation_deg)),
        brightness=float(rng.uniform(*config.brightness)),
        contrast=float(rng.uniform(*config.contrast)),
        saturation=float(rng.uniform(*config.saturation)),
        hue=float(rng.uniform(*config.hue)),
    )


def _rotate_expand(patch: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate with the canvas grown so nothing is cropped; zero fill."""
    h, w = patch.shape[:2]
    rad = math.radians(angle_deg)
    cos, sin = abs(math.cos(rad)), abs(math.sin(rad))
    new_w = int(math.ceil(w * cos + h * sin))
    new_h = int(math.ceil(w * sin + h * cos))
    m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle_deg, 1.0)
    m[0, 2] += (new_w - w) / 2.0
    m[1, 2] += (new_h - h) / 2.0
    return cv2.warpAffine(
        patch, m, (new_w, new_h), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )


def _luma(patch: np.ndarray) -> np.ndarray:
    r, g, b = LUMA_WEIGHTS
    return r * patch[:, :, 0] + g * patch[:, :, 1] + b * patch[:, :, 2]


def apply_params(patch: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply one sampled parameter tuple to a [0, 1] float patch."""
    out = np.asarray(patch, dtype=np.float32)
    if params.hflip:
        out = out[:, ::-1]
    if params.vflip:
        out = out[::-1, :]
    out = np.ascontiguousarray(out)
    if params.angle_deg != 0.0:
        out = _rotate_expand(out, params.angle_deg)
    if params.brightness != 1.0:
        out = out * params.brightness
    if params.contrast != 1.0:
        mean = float(_luma(out).mean())
        out = params.contrast * out + (1.0 - params.contrast) * mean
    if params.saturation != 1.0:
        gray = _luma(out)[:, :, None]
        out = params.saturation * out + (1.0 - params.saturation) * gray
    if params.hue != 0.0:
        hsv = cv2.cvtColor(np.clip(out, 0.0, 1.0), cv2.COLOR_RGB2HSV)
        hsv[:, :, 0] = (hsv[:, :, 0] + params.hue * 360.0) % 360.0
        out = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    if out.shape[:2] != (PATCH_SIZE, PATCH_SIZE):
        out = cv2.resize(out, (PATCH_SIZE, PATCH_SIZE), interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


def augment(
    patch: np.ndarray,
    config: AugmentConfig,
    rng: np.random.Generator | None = None,
    sample_index: int = 0,
    copy_index: int = 0,
) -> np.ndarray:
    """Augment one patch; the generator defaults to the counter-based scheme."""
    if rng is None:
        rng = sample_rng(config.seed, sample_index, copy_index)
    return apply_params(patch, sample_params(config, rng))
