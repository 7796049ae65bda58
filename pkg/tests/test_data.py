"""Round trips and validation for records, masks, and recording I/O."""

import numpy as np
import pytest

from masscast.data import (
    DataError,
    DetectionRecord,
    MassPrediction,
    NormStats,
    RecordingBundle,
    denormalize,
    detection_to_json,
    load_detections,
    load_norm_stats,
    load_recording,
    normalize,
    rle_decode,
    rle_encode,
    save_detections,
    save_norm_stats,
    save_recording,
)


# ---------------------------------------------------------------------------
# run-length masks


def test_rle_round_trip_small():
    mask = np.array(
        [
            [0, 1, 1, 0],
            [1, 1, 0, 0],
            [0, 0, 0, 1],
        ],
        dtype=bool,
    )
    runs = rle_encode(mask)
    assert runs == [1, 2, 1, 2, 5, 1]
    np.testing.assert_array_equal(rle_decode(runs, 4, 3), mask)


def test_rle_leading_foreground_gets_zero_run():
    mask = np.ones((2, 2), dtype=bool)
    runs = rle_encode(mask)
    assert runs[0] == 0
    np.testing.assert_array_equal(rle_decode(runs, 2, 2), mask)


def test_rle_all_background():
    mask = np.zeros((3, 5), dtype=bool)
    runs = rle_encode(mask)
    assert runs == [15]
    np.testing.assert_array_equal(rle_decode(runs, 5, 3), mask)


def test_rle_round_trip_randomized():
    rng = np.random.default_rng(42)
    for _ in range(200):
        h = int(rng.integers(1, 20))
        w = int(rng.integers(1, 20))
        mask = rng.random((h, w)) < rng.uniform(0.05, 0.95)
        runs = rle_encode(mask)
        # alternating runs always start with background
        assert all(r >= 0 for r in runs)
        np.testing.assert_array_equal(rle_decode(runs, w, h), mask)


def test_rle_decode_rejects_bad_total():
    with pytest.raises(DataError):
        rle_decode([3, 2], 4, 2)


def test_rle_decode_rejects_negative_run():
    with pytest.raises(DataError):
        rle_decode([-1, 5], 2, 2)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_denormalize_round_trip():
    stats = NormStats(
        a_min=0.1, a_max=0.9, b_min=0.2, b_max=0.8,
        d_min=0.5, d_max=2.5, m_min=10.0, m_max=400.0,
    )
    rng = np.random.default_rng(7)
    for q in ("a", "b", "d", "mass"):
        for v in rng.uniform(-5, 5, size=20):
            z = normalize(float(v), q, stats)
            back = denormalize(z, q, stats)
            assert back == pytest.approx(float(v), rel=1e-12, abs=1e-12)


def test_normalize_maps_range_to_unit_interval():
    stats = NormStats(
        a_min=0.0, a_max=1.0, b_min=0.0, b_max=1.0,
        d_min=1.0, d_max=3.0, m_min=50.0, m_max=150.0,
    )
    assert normalize(1.0, "d", stats) == 0.0
    assert normalize(3.0, "d", stats) == 1.0
    assert normalize(2.0, "d", stats) == 0.5
    assert normalize(100.0, "mass", stats) == 0.5


def test_normalize_degenerate_range_is_zero():
    stats = NormStats(
        a_min=0.3, a_max=0.3, b_min=0.0, b_max=1.0,
        d_min=1.0, d_max=1.0, m_min=10.0, m_max=20.0,
    )
    assert normalize(0.3, "a", stats) == 0.0
    assert normalize(123.0, "d", stats) == 0.0


def test_norm_stats_rejects_inverted_range():
    with pytest.raises(DataError):
        NormStats(
            a_min=0.9, a_max=0.1, b_min=0.0, b_max=1.0,
            d_min=0.0, d_max=1.0, m_min=0.0, m_max=1.0,
        )


def test_norm_stats_file_round_trip(tmp_path):
    stats = NormStats(
        a_min=0.015625, a_max=0.875, b_min=0.1, b_max=0.6,
        d_min=0.612, d_max=2.399, m_min=12.5, m_max=487.25,
    )
    path = tmp_path / "stats.txt"
    save_norm_stats(stats, path)
    assert load_norm_stats(path) == stats


def test_norm_stats_file_missing_key(tmp_path):
    path = tmp_path / "stats.txt"
    path.write_text("a_min=0.0\na_max=1.0\n")
    with pytest.raises(DataError):
        load_norm_stats(path)


# ---------------------------------------------------------------------------
# records


def test_mass_prediction_consistency():
    MassPrediction("r1", 120.0, 3)
    MassPrediction("r2", None, 0)
    with pytest.raises(DataError):
        MassPrediction("r3", None, 2)
    with pytest.raises(DataError):
        MassPrediction("r4", 50.0, 0)


def test_bundle_frame_count_mismatch():
    rgb = (np.zeros((4, 6, 3), dtype=np.uint8),)
    with pytest.raises(DataError):
        RecordingBundle(
            recording_id="x", rgb_frames=rgb, depth_frames=(),
            width=6, height=4, container_class="cup", true_mass=None,
        )


def test_bundle_rejects_nonpositive_mass():
    rgb = (np.zeros((4, 6, 3), dtype=np.uint8),)
    depth = (np.zeros((4, 6), dtype=np.uint16),)
    with pytest.raises(DataError):
        RecordingBundle(
            recording_id="x", rgb_frames=rgb, depth_frames=depth,
            width=6, height=4, container_class="cup", true_mass=0.0,
        )


# ---------------------------------------------------------------------------
# recording directory round trip


def _toy_bundle(n_frames=2, mass=140.5):
    rng = np.random.default_rng(3)
    rgb = tuple(
        rng.integers(0, 256, size=(24, 32, 3), dtype=np.uint8).astype(np.uint8)
        for _ in range(n_frames)
    )
    depth = tuple(
        rng.integers(0, 3000, size=(24, 32), dtype=np.uint16).astype(np.uint16)
        for _ in range(n_frames)
    )
    return RecordingBundle(
        recording_id="rec-007",
        rgb_frames=rgb,
        depth_frames=depth,
        width=32,
        height=24,
        container_class="glass",
        true_mass=mass,
    )


def test_recording_round_trip(tmp_path):
    bundle = _toy_bundle()
    save_recording(bundle, tmp_path / "rec")
    loaded = load_recording(tmp_path / "rec")
    assert loaded.recording_id == "rec-007"
    assert loaded.container_class == "glass"
    assert loaded.true_mass == pytest.approx(140.5)
    assert loaded.n_frames == 2
    for got, want in zip(loaded.rgb_frames, bundle.rgb_frames):
        np.testing.assert_array_equal(got, want)
    for got, want in zip(loaded.depth_frames, bundle.depth_frames):
        np.testing.assert_array_equal(got, want)
        assert got.dtype == np.uint16


def test_recording_round_trip_unlabeled(tmp_path):
    bundle = _toy_bundle(n_frames=1, mass=None)
    save_recording(bundle, tmp_path / "rec")
    loaded = load_recording(tmp_path / "rec")
    assert loaded.true_mass is None


def test_recording_missing_depth_frame(tmp_path):
    bundle = _toy_bundle()
    save_recording(bundle, tmp_path / "rec")
    (tmp_path / "rec" / "depth" / "000001.png").unlink()
    with pytest.raises(DataError):
        load_recording(tmp_path / "rec")


def test_recording_missing_meta_key(tmp_path):
    bundle = _toy_bundle()
    save_recording(bundle, tmp_path / "rec")
    meta = tmp_path / "rec" / "meta.txt"
    lines = [l for l in meta.read_text().splitlines() if not l.startswith("width=")]
    meta.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError):
        load_recording(tmp_path / "rec")


# ---------------------------------------------------------------------------
# detection file round trip


def _toy_detections():
    rng = np.random.default_rng(11)
    records = []
    for frame in range(3):
        for _ in range(2):
            w = int(rng.integers(2, 8))
            h = int(rng.integers(2, 8))
            mask = rng.random((h, w)) < 0.5
            records.append(
                DetectionRecord(
                    frame_index=frame,
                    class_label="cup",
                    confidence=float(rng.uniform(0.4, 1.0)),
                    bbox=(int(rng.integers(0, 20)), int(rng.integers(0, 20)), w, h),
                    rle=tuple(rle_encode(mask)),
                    image_size=(64, 48),
                )
            )
    return records


def test_detections_round_trip(tmp_path):
    records = _toy_detections()
    path = tmp_path / "detections.jsonl"
    save_detections(records, path)
    loaded = load_detections(path)
    assert loaded.dropped_classes == 0
    got = loaded.all_records()
    assert sorted(got, key=lambda r: (r.frame_index, r.bbox)) == sorted(
        records, key=lambda r: (r.frame_index, r.bbox)
    )


def test_detections_filter_unknown_class(tmp_path):
    keep = DetectionRecord(0, "wine glass", 0.9, (0, 0, 2, 2), (0, 4), (10, 10))
    drop = DetectionRecord(0, "banana", 0.9, (0, 0, 2, 2), (0, 4), (10, 10))
    path = tmp_path / "detections.jsonl"
    save_detections([keep, drop], path)
    loaded = load_detections(path)
    assert loaded.dropped_classes == 1
    assert loaded.all_records() == [keep]


def test_detections_malformed_line_reports_position(tmp_path):
    path = tmp_path / "detections.jsonl"
    good = detection_to_json(
        DetectionRecord(0, "cup", 0.9, (0, 0, 2, 2), (0, 4), (10, 10))
    )
    path.write_text(good + "\n" + '{"frame": 1, "class": "cup"}' + "\n")
    with pytest.raises(DataError, match=":2"):
        load_detections(path)


def test_detections_bad_rle_total(tmp_path):
    path = tmp_path / "detections.jsonl"
    rec = DetectionRecord(0, "cup", 0.9, (0, 0, 3, 3), (0, 4), (10, 10))
    path.write_text(detection_to_json(rec) + "\n")
    with pytest.raises(DataError, match="RLE"):
        load_detections(path)


def test_detections_bbox_fully_outside_image(tmp_path):
    path = tmp_path / "detections.jsonl"
    rec = DetectionRecord(0, "cup", 0.9, (20, 0, 2, 2), (0, 4), (10, 10))
    path.write_text(detection_to_json(rec) + "\n")
    with pytest.raises(DataError, match="bbox"):
        load_detections(path)
