"""Tests for the shared containers and the quality metrics"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acind.errors import ValidationError
from acind.grids import AcVector, ImageGrid, LabelMap, Rng, Sinogram
from acind.metrics import PSNR_IDENTICAL, l2_distance, psnr, ssim
from acind.settings import Settings, get_settings

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)


def _ssim_oracle(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    """Scalar-loop SSIM over every full 11x11 window"""
    radius, sigma = 5, 1.5
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    window = np.outer(taps, taps)
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    values = []
    for i in range(radius, x.shape[0] - radius):
        for j in range(radius, x.shape[1] - radius):
            px = x[i - radius : i + radius + 1, j - radius : j + radius + 1]
            py = y[i - radius : i + radius + 1, j - radius : j + radius + 1]
            mx, my = (window * px).sum(), (window * py).sum()
            vx = (window * px * px).sum() - mx * mx
            vy = (window * py * py).sum() - my * my
            cov = (window * px * py).sum() - mx * my
            values.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(values))


class TestContainers:
    def test_image_is_read_only_copy(self):
        source = np.zeros((3, 4))
        image = ImageGrid(source)
        source[0, 0] = 5.0
        assert image.data[0, 0] == 0.0
        with pytest.raises(ValueError):
            image.data[0, 0] = 1.0

    def test_image_rejects_nan_and_bad_rank(self):
        with pytest.raises(ValidationError):
            ImageGrid(np.array([[0.0, np.nan]]))
        with pytest.raises(ValidationError):
            ImageGrid(np.zeros(4))

    def test_sinogram_shape(self):
        sino = Sinogram(np.ones((5, 7)))
        assert (sino.num_angles, sino.num_detectors) == (5, 7)

    def test_label_range_checked(self):
        with pytest.raises(ValidationError):
            LabelMap(np.array([[0, 1]]), 2)
        with pytest.raises(ValidationError):
            LabelMap(np.array([[1, 3]]), 2)

    def test_relabel_maps_through_order(self):
        labels = LabelMap(np.array([[1, 2, 3]]), 3)
        assert labels.relabel(np.array([3, 1, 2])).labels.tolist() == [[3, 1, 2]]

    def test_acv_sorted_and_nonfinite(self):
        assert AcVector([2.0, 0.0, 1.0]).sorted() == AcVector([0.0, 1.0, 2.0])
        with pytest.raises(ValidationError):
            AcVector([1.0, np.inf])

    def test_rng_streams_reproducible(self):
        a = Rng(42).generator(3).normal(size=8)
        b = Rng(42).generator(3).normal(size=8)
        c = Rng(42).generator(4).normal(size=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_rng_seed_bounds(self):
        with pytest.raises(ValidationError):
            Rng(-1)


class TestSettings:
    def test_defaults(self, monkeypatch):
        for name in ("ACIND_THREADS", "ACIND_LOG_LEVEL", "ACIND_PROGRESS"):
            monkeypatch.delenv(name, raising=False)
        settings_ = Settings.from_env()
        assert settings_.threads == 0
        assert settings_.worker_count() >= 1
        assert not settings_.progress

    def test_threads_cap(self, monkeypatch):
        monkeypatch.setenv("ACIND_THREADS", "3")
        assert Settings.from_env().worker_count() == 3

    @pytest.mark.parametrize("raw", ["-1", "many"])
    def test_bad_threads(self, monkeypatch, raw):
        monkeypatch.setenv("ACIND_THREADS", raw)
        with pytest.raises(ValidationError):
            Settings.from_env()

    def test_read_once(self, monkeypatch):
        get_settings.cache_clear()
        monkeypatch.setenv("ACIND_LOG_LEVEL", "debug")
        first = get_settings()
        monkeypatch.setenv("ACIND_LOG_LEVEL", "ERROR")
        assert get_settings() is first and first.log_level == "DEBUG"
        get_settings.cache_clear()


class TestPsnr:
    def test_identical_is_infinite(self):
        image = ImageGrid(np.arange(16.0).reshape(4, 4))
        assert psnr(image, image, 1.0) == PSNR_IDENTICAL == math.inf

    def test_twenty_db(self):
        assert psnr(ImageGrid.zeros(4, 4), ImageGrid(np.full((4, 4), 0.1)), 1.0) == pytest.approx(20.0, abs=1e-9)

    def test_matches_formula(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        expected = 10.0 * math.log10(2.0**2 / np.mean((a - b) ** 2))
        assert psnr(ImageGrid(a), ImageGrid(b), 2.0) == pytest.approx(expected, rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValidationError):
            psnr(ImageGrid.zeros(4, 4), ImageGrid.zeros(4, 5), 1.0)
        with pytest.raises(ValidationError):
            psnr(ImageGrid.zeros(4, 4), ImageGrid.zeros(4, 4), 0.0)

    @given(arrays(np.float64, (6, 6), elements=finite), arrays(np.float64, (6, 6), elements=finite))
    def test_symmetric(self, a, b):
        assert psnr(ImageGrid(a), ImageGrid(b), 3.0) == psnr(ImageGrid(b), ImageGrid(a), 3.0)


class TestSsim:
    def test_identical(self, rng):
        image = ImageGrid(rng.random((16, 16)))
        assert ssim(image, image, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_small_offset_approaches_one(self):
        base = ImageGrid(np.full((16, 16), 0.5))
        far = ssim(base, ImageGrid(np.full((16, 16), 0.6)), 1.0)
        near = ssim(base, ImageGrid(np.full((16, 16), 0.501)), 1.0)
        assert 0.0 < far < near < 1.0

    def test_checkerboards_against_loop(self):
        ii, jj = np.indices((16, 16))
        board = ((ii + jj) % 2).astype(np.float64)
        value = ssim(ImageGrid(board), ImageGrid(1.0 - board), 1.0)
        assert value < 0.0
        assert value == pytest.approx(_ssim_oracle(board, 1.0 - board, 1.0), abs=1e-10)

    def test_random_against_loop(self, rng):
        a, b = rng.random((20, 18)), rng.random((20, 18))
        assert ssim(ImageGrid(a), ImageGrid(b), 1.0) == pytest.approx(_ssim_oracle(a, b, 1.0), abs=1e-10)

    def test_window_too_large(self):
        with pytest.raises(ValidationError):
            ssim(ImageGrid.zeros(10, 16), ImageGrid.zeros(10, 16), 1.0)


class TestL2Distance:
    def test_examples(self):
        assert l2_distance([0, 0, 0], [0, 0, 0]) == 0.0
        assert l2_distance([3, 4], [0, 0]) == 5.0

    def test_matches_componentwise(self, rng):
        a, b = rng.normal(size=6), rng.normal(size=6)
        assert l2_distance(a, b) == pytest.approx(math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))), rel=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            l2_distance([1.0], [1.0, 2.0])

    @settings(max_examples=50)
    @given(
        arrays(np.float64, 5, elements=finite),
        arrays(np.float64, 5, elements=finite),
        arrays(np.float64, 5, elements=finite),
    )
    def test_triangle_inequality(self, a, b, c):
        assert l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-9
