import numpy as np
import pytest
from PIL import Image

from cmfd import imaging


def direct_convolution(img, kernel):
    """Oracle: linear convolution by explicit zero-padded shift accumulation.

    out[i, j] = sum_{u,v} kernel[u, v] * img[i + ch - u, j + cw - v]
    with the kernel center (ch, cw) = (kh // 2, kw // 2) at the origin.
    """
    h, w = img.shape
    kh, kw = kernel.shape
    ci, cj = kh // 2, kw // 2
    padded = np.pad(img, ((kh, kh), (kw, kw)))
    acc = np.zeros((h, w))
    for u in range(kh):
        for v in range(kw):
            r0 = kh + ci - u
            c0 = kw + cj - v
            acc += kernel[u, v] * padded[r0:r0 + h, c0:c0 + w]
    return acc


class TestLoadSave:
    def test_load_gray_png_known_values(self, tmp_path):
        arr = np.array([[0, 255], [128, 64]], dtype=np.uint8)
        p = tmp_path / "g.png"
        Image.fromarray(arr, mode="L").save(p)
        img = imaging.load_image(p)
        assert img.shape == (2, 2)
        assert np.allclose(img, arr / 255.0, atol=1e-12)

    def test_load_rgb_uses_luma_weights(self, tmp_path):
        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        rgb[0, 0] = (255, 0, 0)
        rgb[0, 1] = (0, 255, 0)
        rgb[1, 0] = (0, 0, 255)
        rgb[1, 1] = (255, 255, 255)
        p = tmp_path / "c.png"
        Image.fromarray(rgb, mode="RGB").save(p)
        img = imaging.load_image(p)
        expected = np.array([[0.299, 0.587], [0.114, 1.0]])
        assert np.allclose(img, expected, atol=1e-12)

    def test_load_missing_file_raises(self, tmp_path):
        with pytest.raises(OSError):
            imaging.load_image(tmp_path / "nope.png")

    def test_load_garbage_raises(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"this is not an image")
        with pytest.raises(Exception):
            imaging.load_image(p)

    def test_mask_roundtrip(self, tmp_path):
        mask = np.zeros((5, 7), dtype=bool)
        mask[1:3, 2:5] = True
        p = tmp_path / "m.png"
        imaging.save_mask(mask, p)
        back = np.asarray(Image.open(p))
        assert back.dtype == np.uint8
        assert set(np.unique(back)) <= {0, 255}
        assert np.array_equal(back > 0, mask)

    def test_validate_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            imaging.validate_gray(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            imaging.validate_gray(np.full((2, 2), 1.5))
        with pytest.raises(ValueError):
            imaging.validate_gray(np.full((2, 2), np.nan))


class TestResize:
    def test_output_dims_round(self):
        img = np.random.default_rng(0).random((100, 100))
        assert imaging.resize_bicubic(img, 2.0).shape == (200, 200)
        assert imaging.resize_bicubic(img, 1.5).shape == (150, 150)
        assert imaging.resize_bicubic(img, 0.5).shape == (50, 50)

    def test_constant_field_preserved(self):
        img = np.full((40, 60), 0.5)
        for f in (0.5, 1.3, 2.0, 3.75):
            out = imaging.resize_bicubic(img, f)
            assert np.allclose(out, 0.5, atol=1e-9)

    def test_linear_ramp_reproduced_on_upscale(self):
        # the a = -0.5 kernel has linear precision, so an affine field is
        # reproduced exactly away from the clamped border
        h, w = 32, 48
        yy, xx = np.mgrid[0:h, 0:w]
        img = (0.3 * xx + 0.2 * yy) / (0.3 * w + 0.2 * h)
        f = 2.0
        out = imaging.resize_bicubic(img, f)
        oy, ox = np.mgrid[0:out.shape[0], 0:out.shape[1]]
        sx = (ox + 0.5) / f - 0.5
        sy = (oy + 0.5) / f - 0.5
        expected = (0.3 * sx + 0.2 * sy) / (0.3 * w + 0.2 * h)
        interior = (slice(4, -4), slice(4, -4))
        assert np.allclose(out[interior], expected[interior], atol=1e-9)

    def test_range_clamped(self):
        rng = np.random.default_rng(1)
        img = (rng.random((30, 30)) > 0.5).astype(float)  # hard edges ring
        out = imaging.resize_bicubic(img, 1.7)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_bad_factor_raises(self):
        img = np.zeros((4, 4))
        with pytest.raises(ValueError):
            imaging.resize_bicubic(img, 0.0)
        with pytest.raises(ValueError):
            imaging.resize_bicubic(img, -1.0)


class TestConvolveFFT:
    def test_matches_direct_convolution_random(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            img = rng.random((32, 32))
            kernel = rng.random((5, 5)) - 0.5
            got = imaging.convolve_fft(img, kernel)
            want = direct_convolution(img, kernel)
            assert np.max(np.abs(got - want)) <= 1e-8

    def test_even_and_rectangular_shapes(self):
        rng = np.random.default_rng(7)
        for shape, kshape in [((17, 23), (3, 5)), ((16, 16), (4, 4)), ((9, 31), (7, 1))]:
            img = rng.random(shape)
            kernel = rng.random(kshape)
            got = imaging.convolve_fft(img, kernel)
            want = direct_convolution(img, kernel)
            assert got.shape == shape
            assert np.max(np.abs(got - want)) <= 1e-8

    def test_identity_kernel(self):
        rng = np.random.default_rng(3)
        img = rng.random((20, 20))
        kernel = np.zeros((3, 3))
        kernel[1, 1] = 1.0
        assert np.allclose(imaging.convolve_fft(img, kernel), img, atol=1e-10)


class TestGaussianBlur:
    def test_kernel_normalized(self):
        assert abs(imaging.gaussian_kernel_1d(1.5).sum() - 1.0) < 1e-12

    def test_constant_preserved(self):
        img = np.full((30, 30), 0.25)
        out = imaging.gaussian_blur(img, 2.0)
        assert np.allclose(out, 0.25, atol=1e-12)

    def test_smooths_impulse_symmetrically(self):
        img = np.zeros((21, 21))
        img[10, 10] = 1.0
        out = imaging.gaussian_blur(img, 1.5)
        assert abs(out.sum() - 1.0) < 1e-9
        assert np.allclose(out, out[::-1, :], atol=1e-12)
        assert np.allclose(out, out[:, ::-1], atol=1e-12)


class TestMorphology:
    def test_dilate_center_pixel_radius1_plus_shape(self):
        mask = np.zeros((7, 7), dtype=bool)
        mask[3, 3] = True
        out = imaging.dilate(mask, 1)
        assert out.sum() == 5
        assert out[3, 3] and out[2, 3] and out[4, 3] and out[3, 2] and out[3, 4]

    def test_dilate_center_pixel_radius2_disk13(self):
        # offsets with dx^2 + dy^2 <= 4: 1 + 4 + 4 + 4 = 13 pixels
        mask = np.zeros((9, 9), dtype=bool)
        mask[4, 4] = True
        out = imaging.dilate(mask, 2)
        assert out.sum() == 13
        yy, xx = np.nonzero(out)
        assert np.all((yy - 4) ** 2 + (xx - 4) ** 2 <= 4)

    def test_dilate_empty_mask(self):
        mask = np.zeros((5, 5), dtype=bool)
        assert imaging.dilate(mask, 3).sum() == 0

    def test_dilate_extensive_and_monotone(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            mask = rng.random((20, 20)) > 0.9
            d1 = imaging.dilate(mask, 1.5)
            d2 = imaging.dilate(mask, 3.0)
            assert np.all(d1 >= mask)       # extensive
            assert np.all(d2 >= d1)          # monotone in radius

    def test_erode_dual_of_dilate(self):
        rng = np.random.default_rng(6)
        mask = rng.random((20, 20)) > 0.5
        assert np.array_equal(imaging.erode(mask, 2), ~imaging.dilate(~mask, 2))

    def test_closing_fills_small_gap(self):
        mask = np.zeros((10, 20), dtype=bool)
        mask[2:8, 2:9] = True
        mask[2:8, 11:18] = True   # 2-px gap between two tall bars
        out = imaging.closing(mask, 2)
        assert out[4, 9] and out[4, 10]
        assert np.all(out >= mask)

    def test_remove_small_components(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[2:8, 2:8] = True     # 36 px, kept
        mask[15, 15] = True       # 1 px, dropped
        out = imaging.remove_small_components(mask, min_pixels=4)
        assert out.sum() == 36
        assert not out[15, 15]


class TestSampleBilinear:
    def test_exact_at_grid_points(self):
        rng = np.random.default_rng(8)
        img = rng.random((6, 7))
        xs = np.array([0.0, 3.0, 6.0])
        ys = np.array([0.0, 2.0, 5.0])
        vals, inside = imaging.sample_bilinear(img, xs, ys)
        assert inside.all()
        assert np.allclose(vals, img[ys.astype(int), xs.astype(int)], atol=1e-12)

    def test_midpoint_average(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]])
        vals, _ = imaging.sample_bilinear(img, np.array([0.5]), np.array([0.5]))
        assert np.allclose(vals, 0.5)

    def test_outside_marked_and_filled(self):
        img = np.ones((4, 4))
        vals, inside = imaging.sample_bilinear(
            img, np.array([-1.0, 2.0, 9.0]), np.array([1.0, 1.0, 1.0]), fill=0.0)
        assert list(inside) == [False, True, False]
        assert vals[0] == 0.0 and vals[2] == 0.0 and vals[1] == 1.0
