import numpy as np
import pytest
from PIL import Image

from clustercam import Heatmap, ParameterError, PreprocessConfig, load_and_preprocess, render_overlay
from clustercam.imaging import (
    apply_colormap,
    bilinear_resize,
    decode_image,
    heatmap_to_rgb,
    save_png,
)

from conftest import oracle_bilinear


def write_png(path, array):
    Image.fromarray(array.astype(np.uint8)).save(path)


class TestBilinearResize:
    def test_identity(self):
        a = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(bilinear_resize(a, 3, 4), a)

    def test_corner_alignment(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(size=(5, 7))
        up = bilinear_resize(a, 50, 70)
        assert up[0, 0] == pytest.approx(a[0, 0])
        assert up[-1, -1] == pytest.approx(a[-1, -1])
        assert up[0, -1] == pytest.approx(a[0, -1])

    def test_scalar_oracle_parity(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 6))
        got = bilinear_resize(a, 7, 9)
        expected = np.array(oracle_bilinear(a, 7, 9))
        assert np.abs(got - expected).max() < 1e-12

    def test_channels_last(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=(4, 4, 3))
        out = bilinear_resize(a, 8, 8)
        assert out.shape == (8, 8, 3)
        for c in range(3):
            assert np.abs(out[..., c] - bilinear_resize(a[..., c], 8, 8)).max() < 1e-12


class TestPreprocess:
    def test_hand_arithmetic(self, tmp_path):
        arr = np.zeros((8, 8, 3), dtype=np.uint8)
        arr[..., 0] = 255
        path = tmp_path / "red.png"
        write_png(path, arr)
        img = load_and_preprocess(str(path), PreprocessConfig(target_h=8, target_w=8))
        assert img.data[0, 0, 0] == pytest.approx((1.0 - 0.485) / 0.229, abs=1e-6)
        assert img.data[1, 0, 0] == pytest.approx((0.0 - 0.456) / 0.224, abs=1e-6)

    def test_default_dims(self, tmp_path):
        rng = np.random.default_rng(3)
        path = tmp_path / "img.png"
        write_png(path, rng.integers(0, 256, size=(50, 40, 3)))
        img = load_and_preprocess(str(path))
        assert img.data.shape == (3, 224, 224)

    def test_grayscale_replicated(self, tmp_path):
        rng = np.random.default_rng(4)
        gray = rng.integers(0, 256, size=(10, 10)).astype(np.uint8)
        path = tmp_path / "gray.png"
        Image.fromarray(gray, "L").save(path)
        rgb = decode_image(str(path))
        assert np.array_equal(rgb[..., 0], rgb[..., 1])
        assert np.array_equal(rgb[..., 1], rgb[..., 2])

    def test_decode_error(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"nonsense")
        with pytest.raises(ParameterError):
            load_and_preprocess(str(bad))

    def test_bad_std(self):
        with pytest.raises(ParameterError):
            PreprocessConfig(std=(0.0, 1.0, 1.0))


class TestColormap:
    def test_anchor_endpoints(self):
        low = apply_colormap(np.array([0.0]))
        high = apply_colormap(np.array([1.0]))
        assert np.array_equal(low[0], [0.0, 0.0, 131.0])
        assert np.array_equal(high[0], [128.0, 0.0, 0.0])

    def test_midpoint_interpolation(self):
        # 0.5 sits halfway between the 0.35 and 0.65 anchors
        mid = apply_colormap(np.array([0.5]))[0]
        assert np.allclose(mid, [127.5, 255.0, 127.5])
        rgb = heatmap_to_rgb(Heatmap(np.array([[0.5, 0.5], [0.5, 1.0]])))
        assert tuple(rgb[0, 0]) == (128, 255, 128)  # half-up rounding


class TestOverlay:
    def test_zero_heatmap_blend(self):
        original = np.full((4, 4, 3), 200, dtype=np.uint8)
        out = render_overlay(original, Heatmap(np.zeros((4, 4))), alpha=0.5)
        assert tuple(out[0, 0]) == (100, 100, 166)  # 0.5*200 + 0.5*(0,0,131), half-up

    def test_alpha_zero_bit_exact(self):
        rng = np.random.default_rng(5)
        original = rng.integers(0, 256, size=(6, 6, 3)).astype(np.uint8)
        heatmap = Heatmap(np.ones((3, 3)) * np.linspace(0, 1, 3))
        out = render_overlay(original, heatmap, alpha=0.0)
        assert np.array_equal(out, original)

    def test_output_dims_match_original(self):
        original = np.zeros((30, 20, 3), dtype=np.uint8)
        heatmap = Heatmap(np.linspace(0, 1, 16).reshape(4, 4))
        out = render_overlay(original, heatmap, alpha=0.7)
        assert out.shape == (30, 20, 3) and out.dtype == np.uint8

    def test_requires_normalized(self):
        with pytest.raises(Exception):
            render_overlay(np.zeros((4, 4, 3), dtype=np.uint8),
                           Heatmap(np.array([[2.0, -1.0]]), normalized=False), 0.5)


class TestSavePng:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        arr = rng.integers(0, 256, size=(5, 5, 3)).astype(np.uint8)
        path = tmp_path / "out.png"
        save_png(str(path), arr)
        back = np.asarray(Image.open(path))
        assert np.array_equal(back, arr)

    def test_deterministic_bytes(self, tmp_path):
        arr = np.linspace(0, 255, 48).reshape(4, 4, 3).astype(np.uint8)
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        save_png(str(p1), arr)
        save_png(str(p2), arr)
        assert p1.read_bytes() == p2.read_bytes()
