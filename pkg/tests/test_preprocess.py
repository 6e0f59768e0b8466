import numpy as np
import pytest

from deskdrive.errors import ConfigError
from deskdrive.pilots import PreprocessMode, area_resize, preprocess_frame, rgb_to_hsv
from deskdrive.world import CameraFrame


def solid_frame(rgb, size=8):
    px = np.tile(np.asarray(rgb, dtype=float), (size, size, 1))
    return CameraFrame(pixels=px)


class TestRgbToHsv:
    @pytest.mark.parametrize("rgb,hsv", [
        ((1.0, 0.0, 0.0), (0.0, 1.0, 1.0)),
        ((0.0, 1.0, 0.0), (1 / 3, 1.0, 1.0)),
        ((0.0, 0.0, 1.0), (2 / 3, 1.0, 1.0)),
        ((1.0, 1.0, 1.0), (0.0, 0.0, 1.0)),
        ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        ((0.5, 0.5, 0.0), (1 / 6, 1.0, 0.5)),
    ])
    def test_known_colors(self, rgb, hsv):
        out = rgb_to_hsv(np.array([[rgb]], dtype=float))[0, 0]
        assert np.allclose(out, hsv, atol=1e-12)

    def test_matches_colorsys_on_random_pixels(self):
        import colorsys
        rng = np.random.default_rng(3)
        px = rng.uniform(size=(20, 3))
        ours = rgb_to_hsv(px[None])[0]
        for i in range(20):
            expect = colorsys.rgb_to_hsv(*px[i])
            assert np.allclose(ours[i], expect, atol=1e-12)


class TestAreaResize:
    def test_identity_when_same_size(self):
        img = np.random.default_rng(0).uniform(size=(8, 8, 3))
        assert area_resize(img, 8, 8) is img

    def test_integer_factor_is_block_mean(self):
        img = np.arange(16.0).reshape(4, 4, 1)
        out = area_resize(img, 2, 2)
        assert np.allclose(out[0, 0, 0], img[:2, :2, 0].mean())
        assert np.allclose(out[1, 1, 0], img[2:, 2:, 0].mean())

    def test_preserves_mean_any_ratio(self):
        img = np.random.default_rng(1).uniform(size=(48, 72, 3))
        out = area_resize(img, 15, 15)
        assert out.shape == (15, 15, 3)
        assert np.allclose(out.mean(), img.mean(), atol=1e-12)

    def test_paper_downscale_shape(self):
        img = np.zeros((480, 720, 3))
        assert area_resize(img, 150, 150).shape == (150, 150, 3)


class TestPreprocessModes:
    def test_rgb_identity_at_resolution(self):
        f = solid_frame((0.3, 0.5, 0.7))
        out = preprocess_frame(f, PreprocessMode(colorspace="rgb"))
        assert np.array_equal(out.pixels, f.pixels)

    def test_white_pixel_clamps_at_one(self):
        out = preprocess_frame(solid_frame((1.0, 1.0, 1.0)),
                               PreprocessMode(colorspace="hsv_masked"))
        assert np.allclose(out.pixels[..., 2], 1.0)

    def test_pure_red_untouched_by_mask(self):
        # red: hue 0 (outside yellow band), saturation 1 (outside white band)
        f = solid_frame((1.0, 0.0, 0.0))
        masked = preprocess_frame(f, PreprocessMode(colorspace="hsv_masked"))
        plain = preprocess_frame(f, PreprocessMode(colorspace="hsv"))
        assert np.array_equal(masked.pixels, plain.pixels)

    def test_yellow_gets_value_boost(self):
        f = solid_frame((0.8, 0.7, 0.1))
        masked = preprocess_frame(f, PreprocessMode(colorspace="hsv_masked"))
        plain = preprocess_frame(f, PreprocessMode(colorspace="hsv"))
        assert masked.pixels[0, 0, 2] > plain.pixels[0, 0, 2]

    def test_mask_changes_only_band_pixels(self):
        rng = np.random.default_rng(0)
        px = rng.uniform(size=(16, 16, 3))
        px[2, 2] = (0.9, 0.8, 0.1)   # yellow
        px[3, 3] = (0.95, 0.95, 0.97)  # near white
        f = CameraFrame(pixels=px)
        masked = preprocess_frame(f, PreprocessMode(colorspace="hsv_masked"))
        plain = preprocess_frame(f, PreprocessMode(colorspace="hsv"))
        changed = ~np.isclose(masked.pixels, plain.pixels).all(axis=-1)
        hsv = rgb_to_hsv(px)
        mode = PreprocessMode()
        yellow = ((hsv[..., 0] >= mode.yellow_hue[0]) & (hsv[..., 0] <= mode.yellow_hue[1])
                  & (hsv[..., 1] >= mode.yellow_s_min))
        white = (hsv[..., 1] <= mode.white_s_max) & (hsv[..., 2] >= mode.white_v_min)
        assert changed[2, 2] and changed[3, 3]
        assert not changed[~(yellow | white)].any()

    def test_downscale_applied(self):
        f = solid_frame((0.2, 0.4, 0.6), size=32)
        out = preprocess_frame(f, PreprocessMode(out_size=(8, 8)))
        assert out.pixels.shape == (8, 8, 3)

    def test_bad_colorspace(self):
        with pytest.raises(ConfigError):
            PreprocessMode(colorspace="lab")

    def test_dict_round_trip(self):
        m = PreprocessMode(colorspace="hsv_masked", out_size=(64, 64), gain=1.5)
        assert PreprocessMode.from_dict(m.to_dict()) == m
