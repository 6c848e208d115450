import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from cmfd import imaging, keypoints
from cmfd.keypoints import DetectorConfig, detect_keypoints, keypoints_to_array, scale_factor


def textured_image(seed=11, shape=(128, 128), blur=2.0):
    """Deterministic smooth random field, quantized like an 8-bit file."""
    rng = np.random.default_rng(seed)
    base = imaging.gaussian_blur(rng.random(shape), blur)
    base = (base - base.min()) / (base.max() - base.min())
    return np.round(base * 255) / 255


NATIVE = DetectorConfig(normalization_target=1)   # factor 1: keep native frame


class TestScaleFactor:
    def test_small_image_upsampled_to_target(self):
        assert scale_factor(1000, 1500, 3000) == 2.0

    def test_long_edge_at_target_untouched(self):
        assert scale_factor(3000, 2000, 3000) == 1.0

    def test_large_image_untouched(self):
        assert scale_factor(4000, 2500, 3000) == 1.0

    def test_small_image_fractional_factor(self):
        assert scale_factor(600, 800, 3000) == 3.75

    def test_bad_dims_raise(self):
        with pytest.raises(ValueError):
            scale_factor(0, 100)
        with pytest.raises(ValueError):
            scale_factor(100, -5)


class TestDetect:
    def test_constant_image_no_keypoints(self):
        img = np.full((64, 64), 0.5)
        assert detect_keypoints(img, NATIVE) == []

    def test_gaussian_blob_dominant_keypoint_centered(self):
        yy, xx = np.mgrid[0:96, 0:96]
        img = np.clip(0.8 * np.exp(-((xx - 48) ** 2 + (yy - 48) ** 2) / (2 * 4.0 ** 2)), 0, 1)
        kps = detect_keypoints(img, NATIVE)
        assert len(kps) >= 1
        best = max(kps, key=lambda k: abs(k.response))
        assert abs(best.x - 48) <= 2.0 and abs(best.y - 48) <= 2.0

    def test_output_sorted_and_in_bounds(self):
        img = textured_image()
        kps = keypoints_to_array(detect_keypoints(img, NATIVE))
        assert len(kps) > 0
        assert np.all(kps[:, 0] >= 0) and np.all(kps[:, 0] < img.shape[1])
        assert np.all(kps[:, 1] >= 0) and np.all(kps[:, 1] < img.shape[0])
        assert np.all(kps[:, 2] > 0)
        order = np.lexsort((kps[:, 2], kps[:, 0], kps[:, 1]))
        assert np.array_equal(order, np.arange(len(kps)))

    def test_deterministic_across_runs(self):
        img = textured_image(seed=4)
        a = keypoints_to_array(detect_keypoints(img, NATIVE))
        b = keypoints_to_array(detect_keypoints(img, NATIVE))
        assert np.array_equal(a, b)

    def test_rotation_90_permutes_keypoint_set(self):
        # detection commutes with an exact quarter-turn; sets are compared
        # by optimal assignment with 1 px / 5 % sigma tolerance
        img = textured_image()
        k1 = keypoints_to_array(detect_keypoints(img, NATIVE))
        rot = np.ascontiguousarray(np.rot90(img))
        k2 = keypoints_to_array(detect_keypoints(rot, NATIVE))
        assert abs(len(k1) - len(k2)) <= max(2, 0.02 * len(k1))
        w = img.shape[1]
        mapped = np.column_stack([k1[:, 1], w - 1 - k1[:, 0], k1[:, 2]])
        cost = np.linalg.norm(mapped[:, None, :2] - k2[None, :, :2], axis=2)
        r, c = linear_sum_assignment(cost)
        pos_ok = cost[r, c] <= 1.0
        sig_ok = np.abs(mapped[r, 2] - k2[c, 2]) / mapped[r, 2] <= 0.05
        assert np.mean(pos_ok & sig_ok) >= 0.98

    def test_upsampling_maps_back_to_original_frame(self):
        img = textured_image(seed=9, shape=(100, 150))
        cfg = DetectorConfig(normalization_target=300)   # factor 2
        kps = keypoints_to_array(detect_keypoints(img, cfg))
        assert len(kps) > 0
        assert np.all(kps[:, 0] < 150) and np.all(kps[:, 1] < 100)


class TestContrastGate:
    def test_lowering_threshold_never_loses_keypoints(self):
        img = textured_image(seed=21)
        counts = []
        for t in (0.03, 0.01, 0.0):
            cfg = DetectorConfig(normalization_target=1, contrast_threshold=t)
            counts.append(len(detect_keypoints(img, cfg)))
        assert counts[0] <= counts[1] <= counts[2]

    def test_zero_threshold_densifies_keypoints(self):
        # removing the contrast gate should at least double coverage on a
        # natural-looking textured image
        img = textured_image(seed=33, shape=(256, 256), blur=3.0)
        n_gated = len(detect_keypoints(
            img, DetectorConfig(normalization_target=1, contrast_threshold=0.03)))
        n_open = len(detect_keypoints(
            img, DetectorConfig(normalization_target=1, contrast_threshold=0.0)))
        assert n_open >= 2 * max(n_gated, 1)


class TestPyramidShape:
    def test_octave_count_follows_min_dim(self):
        assert keypoints.num_octaves(512, 512) == 7
        assert keypoints.num_octaves(3000, 2250) == 9

    def test_pyramid_level_count(self):
        img = np.zeros((64, 64), dtype=np.float32)
        cfg = DetectorConfig(normalization_target=1)
        octs = keypoints.gaussian_pyramid(img, cfg)
        assert all(o.shape[0] == cfg.scales_per_octave + 3 for o in octs)
        assert octs[1].shape[1] == 32
