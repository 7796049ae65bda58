"""Patch geometry and augmentation behavior."""

import numpy as np
import pytest

from masscast.data import PATCH_SIZE
from masscast.patchops import (
    AugmentConfig,
    IDENTITY_CONFIG,
    PatchError,
    apply_params,
    augment,
    compute_aspect_ratios,
    crop_pad_resize,
    sample_params,
    sample_rng,
)


# ---------------------------------------------------------------------------
# crop / pad / resize


def test_crop_exact_patch_size_is_lossless():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(200, 300, 3), dtype=np.uint8)
    patch = crop_pad_resize(img, (30, 40, PATCH_SIZE, PATCH_SIZE))
    want = img[40 : 40 + PATCH_SIZE, 30 : 30 + PATCH_SIZE].astype(np.float32) / 255.0
    np.testing.assert_allclose(patch, want)


def test_crop_pads_short_side_symmetrically():
    img = np.full((200, 300, 3), 255, dtype=np.uint8)
    # width 112, height 56 -> 28 rows of zero padding on top and bottom
    patch = crop_pad_resize(img, (0, 0, 112, 56))
    assert patch.shape == (112, 112, 3)
    np.testing.assert_allclose(patch[:28], 0.0)
    np.testing.assert_allclose(patch[-28:], 0.0)
    np.testing.assert_allclose(patch[28:84], 1.0)


def test_crop_odd_padding_goes_to_trailing_side():
    img = np.full((200, 300, 3), 255, dtype=np.uint8)
    patch = crop_pad_resize(img, (0, 0, 113, 112))
    # side 113: one leftover row under symmetric split lands at the bottom
    assert patch.shape == (112, 112, 3)
    assert patch[0].mean() > patch[-1].mean()


def test_crop_resizes_flat_region_exactly():
    img = np.zeros((100, 100, 3), dtype=np.uint8)
    img[:, :, 0] = 200
    patch = crop_pad_resize(img, (10, 10, 50, 50))
    assert patch.shape == (112, 112, 3)
    np.testing.assert_allclose(patch[:, :, 0], 200 / 255.0, atol=1e-6)
    np.testing.assert_allclose(patch[:, :, 1:], 0.0, atol=1e-6)


def test_crop_positions_marker_in_upsampled_patch():
    img = np.zeros((60, 60, 3), dtype=np.uint8)
    img[15, 15] = 255  # top-left corner pixel of the crop below
    patch = crop_pad_resize(img, (15, 15, 28, 28))
    # 28 -> 112 is a 4x upsample, so the marker lights the top-left block
    assert patch[:3, :3].max() > 0.5
    assert patch[20:, 20:].max() == 0.0


@pytest.mark.parametrize("bbox", [(0, 0, 0, 5), (0, 0, 5, 0), (0, 0, -3, 5)])
def test_crop_degenerate_bbox(bbox):
    img = np.zeros((60, 60, 3), dtype=np.uint8)
    with pytest.raises(PatchError):
        crop_pad_resize(img, bbox)


def test_crop_unclipped_bbox_rejected():
    img = np.zeros((60, 60, 3), dtype=np.uint8)
    with pytest.raises(PatchError):
        crop_pad_resize(img, (50, 50, 20, 20))


def test_aspect_ratios():
    a, b = compute_aspect_ratios((10, 20, 32, 24), (64, 48))
    assert a == pytest.approx(0.5)
    assert b == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# augmentation


def _checker_patch():
    rng = np.random.default_rng(9)
    return rng.random((PATCH_SIZE, PATCH_SIZE, 3)).astype(np.float32)


def test_identity_config_is_noop():
    patch = _checker_patch()
    out = augment(patch, IDENTITY_CONFIG, sample_index=3, copy_index=1)
    np.testing.assert_allclose(out, patch, atol=1e-6)


def test_augment_reproducible_per_sample_and_copy():
    patch = _checker_patch()
    cfg = AugmentConfig(seed=123)
    a1 = augment(patch, cfg, sample_index=5, copy_index=2)
    a2 = augment(patch, cfg, sample_index=5, copy_index=2)
    np.testing.assert_array_equal(a1, a2)
    b = augment(patch, cfg, sample_index=5, copy_index=3)
    assert not np.array_equal(a1, b)


def test_augment_output_shape_and_range():
    patch = _checker_patch()
    cfg = AugmentConfig(seed=0, brightness=(1.5, 2.0))
    for i in range(10):
        out = augment(patch, cfg, sample_index=i, copy_index=0)
        assert out.shape == (PATCH_SIZE, PATCH_SIZE, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_hflip_only_mirrors_columns():
    params_rng = sample_rng(0, 0, 0)
    cfg = AugmentConfig(
        p_hflip=1.0, p_vflip=0.0, rotation_deg=(0.0, 0.0),
        brightness=(1.0, 1.0), contrast=(1.0, 1.0),
        saturation=(1.0, 1.0), hue=(0.0, 0.0),
    )
    params = sample_params(cfg, params_rng)
    assert params.hflip and not params.vflip
    patch = _checker_patch()
    out = apply_params(patch, params)
    np.testing.assert_allclose(out, patch[:, ::-1], atol=1e-6)


def test_brightness_scales_flat_patch():
    cfg = AugmentConfig(
        p_hflip=0.0, p_vflip=0.0, rotation_deg=(0.0, 0.0),
        brightness=(1.2, 1.2), contrast=(1.0, 1.0),
        saturation=(1.0, 1.0), hue=(0.0, 0.0),
    )
    patch = np.full((PATCH_SIZE, PATCH_SIZE, 3), 0.5, dtype=np.float32)
    out = augment(patch, cfg)
    np.testing.assert_allclose(out, 0.6, atol=1e-6)


def test_rotation_keeps_all_content():
    # a bright border would be cropped away if the canvas did not expand
    patch = np.zeros((PATCH_SIZE, PATCH_SIZE, 3), dtype=np.float32)
    patch[0, :, :] = 1.0
    patch[-1, :, :] = 1.0
    patch[:, 0, :] = 1.0
    patch[:, -1, :] = 1.0
    cfg = AugmentConfig(
        p_hflip=0.0, p_vflip=0.0, rotation_deg=(45.0, 45.0),
        brightness=(1.0, 1.0), contrast=(1.0, 1.0),
        saturation=(1.0, 1.0), hue=(0.0, 0.0),
    )
    out = augment(patch, cfg)
    assert out.shape == (PATCH_SIZE, PATCH_SIZE, 3)
    # rotated square occupies the middle; its corners stay inside the canvas
    assert out.max() > 0.3
    assert out[0, 0].max() == pytest.approx(0.0, abs=1e-6)


def test_saturation_zero_is_grayscale():
    cfg = AugmentConfig(
        p_hflip=0.0, p_vflip=0.0, rotation_deg=(0.0, 0.0),
        brightness=(1.0, 1.0), contrast=(1.0, 1.0),
        saturation=(0.0, 0.0), hue=(0.0, 0.0),
    )
    patch = _checker_patch()
    out = augment(patch, cfg)
    np.testing.assert_allclose(out[:, :, 0], out[:, :, 1], atol=1e-6)
    np.testing.assert_allclose(out[:, :, 1], out[:, :, 2], atol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(p_hflip=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(brightness=(1.2, 0.8))
