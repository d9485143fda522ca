"""Tests for the ray-driven projector and the ramp filter"""

import math

import numpy as np
import pytest

from acind.errors import ValidationError
from acind.grids import ImageGrid, Sinogram
from acind.projector import (
    ParallelBeamProjector,
    ScanGeometry,
    back_project,
    forward_project,
    get_projector,
    padded_length,
    ramp_filter,
    ramp_response,
)


def _quadrature(image: np.ndarray, theta: float, offset: float, step: float = 0.01) -> float:
    """Midpoint-rule line integral sampled every `step` pixels"""
    height, width = image.shape
    reach = math.hypot(height, width)
    t = -reach + (np.arange(int(2 * reach / step)) + 0.5) * step
    c, s = math.cos(theta), math.sin(theta)
    x = offset * c - t * s
    y = offset * s + t * c
    cols = np.floor(x + width / 2.0).astype(int)
    rows = np.floor(y + height / 2.0).astype(int)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    return float(image[rows[inside], cols[inside]].sum() * step)


class TestGeometry:
    def test_angles_equiangular(self):
        geom = ScanGeometry.parallel(8, 8, 6)
        assert np.allclose(geom.angles, np.arange(6) * math.pi / 6)
        assert np.all(np.diff(geom.angles) > 0)

    def test_default_detectors_cover_diagonal(self):
        assert ScanGeometry.parallel(64, 64, 10).num_detectors == 91

    def test_invalid(self):
        with pytest.raises(ValidationError):
            ScanGeometry(8, 8, 0, 10)
        with pytest.raises(ValidationError):
            ScanGeometry(8, 8, 4, 10, detector_spacing=0.0)


class TestForwardProject:
    def test_zero_image(self, geom16):
        assert not forward_project(ImageGrid.zeros(16, 16), geom16).data.any()

    def test_dimension_mismatch(self, geom16):
        with pytest.raises(ValidationError):
            forward_project(ImageGrid.zeros(16, 15), geom16)

    def test_disc_chord(self):
        size, radius = 128, 50.0
        geom = ScanGeometry.parallel(size, size, 4, num_detectors=181)
        centres = np.arange(size) - size / 2.0 + 0.5
        xx, yy = np.meshgrid(centres, centres)
        disc = (xx**2 + yy**2 <= radius**2).astype(np.float64)
        sino = forward_project(ImageGrid(disc), geom)
        central = (geom.num_detectors - 1) // 2
        assert geom.detector_positions[central] == 0.0
        assert np.allclose(sino.data[:, central], 2 * radius, rtol=0.02)

    def test_matches_quadrature(self, rng):
        geom = ScanGeometry(16, 16, 8, 22)
        image = 0.5 + rng.random((16, 16))
        sino = forward_project(ImageGrid(image), geom)
        checked = 0
        for k, theta in enumerate(geom.angles):
            for v, offset in enumerate(geom.detector_positions):
                exact = sino.data[k, v]
                if exact < 2.0:
                    continue
                assert exact == pytest.approx(_quadrature(image, theta, offset), rel=0.01)
                checked += 1
        assert checked > 100

    @pytest.mark.parametrize("num_detectors", [22, 23])
    def test_quarter_turn_permutes_sinogram(self, rng, num_detectors):
        geom = ScanGeometry(16, 16, 4, num_detectors)
        image = rng.random((16, 16))
        sino = forward_project(ImageGrid(image), geom).data
        turned = forward_project(ImageGrid(np.rot90(image)), geom).data
        # angle k of the turned image is angle k + 2 of the original, wrapping with s -> -s
        expected = np.concatenate([sino[2:], sino[:2, ::-1]])
        assert np.allclose(turned, expected, rtol=0.0, atol=1e-9)
        back = forward_project(ImageGrid(np.rot90(image, -1)), geom).data
        assert np.allclose(back, np.concatenate([sino[2:, ::-1], sino[:2]]), rtol=0.0, atol=1e-9)

    def test_ray_on_pixel_boundary_is_shared(self):
        geom = ScanGeometry(4, 4, 1, 5)
        path = get_projector(geom).ray_path(0, 2)
        # vertical ray x = 0 runs between columns 1 and 2
        assert sorted(path.pixels.tolist()) == [1, 2, 5, 6, 9, 10, 13, 14]
        assert np.allclose(path.lengths, 0.5)
        edge = get_projector(geom).ray_path(0, 0)
        assert sorted(edge.pixels.tolist()) == [0, 4, 8, 12]
        assert np.allclose(edge.lengths, 0.5)

    def test_linear(self, geom16, rng):
        a, b = rng.random((16, 16)), rng.random((16, 16))
        combined = forward_project(ImageGrid(2.0 * a - 3.0 * b), geom16).data
        separate = 2.0 * forward_project(ImageGrid(a), geom16).data - 3.0 * forward_project(ImageGrid(b), geom16).data
        assert np.allclose(combined, separate, atol=1e-12)


class TestBackProject:
    def test_zero_sinogram(self, geom16):
        assert not back_project(Sinogram(np.zeros((8, geom16.num_detectors))), geom16).data.any()

    def test_adjoint(self, geom16):
        gen = np.random.default_rng(0)
        for _ in range(100):
            x = gen.normal(size=(16, 16))
            y = gen.normal(size=(8, geom16.num_detectors))
            ax = forward_project(ImageGrid(x), geom16).data
            aty = back_project(Sinogram(y), geom16).data
            lhs, rhs = float(np.sum(ax * y)), float(np.sum(x * aty))
            assert abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y)) < 1e-10

    def test_single_bin_support(self, geom16):
        k, v = 3, geom16.num_detectors // 2 + 2
        sino = np.zeros((8, geom16.num_detectors))
        sino[k, v] = 1.0
        image = back_project(Sinogram(sino), geom16).data
        path = get_projector(geom16).ray_path(k, v)
        assert set(np.flatnonzero(image)) == set(path.pixels.tolist())
        assert np.allclose(image.reshape(-1)[path.pixels], path.lengths)


class TestProjectorCache:
    def test_cached_per_geometry(self, geom16):
        assert get_projector(geom16) is get_projector(ScanGeometry.parallel(16, 16, 8))

    def test_thread_count_does_not_change_matrix(self):
        geom = ScanGeometry.parallel(12, 12, 9)
        single = ParallelBeamProjector(geom, num_threads=1).matrix
        many = ParallelBeamProjector(geom, num_threads=4).matrix
        assert np.array_equal(single.indptr, many.indptr)
        assert np.array_equal(single.indices, many.indices)
        assert np.array_equal(single.data, many.data)


class TestRampFilter:
    def test_padding(self):
        assert padded_length(22) == 64
        assert padded_length(32) == 64

    def test_dc_nearly_removed(self):
        for num_det in (8, 22, 91):
            response = ramp_response(num_det)
            assert 0.0 < response[0] < 1.0 / padded_length(num_det)

    def test_impulse_gives_ram_lak_samples(self):
        geom = ScanGeometry(16, 16, 1, 16)
        row = np.zeros((1, 16))
        row[0, 7] = 1.0
        out = ramp_filter(Sinogram(row), geom).data[0]
        n = np.arange(16) - 7
        expected = np.where(n == 0, 0.5, np.where(n % 2 == 1, -2.0 / (math.pi * np.where(n == 0, 1, n)) ** 2, 0.0))
        assert np.allclose(out, expected, atol=1e-9)

    def test_constant_row_nearly_vanishes_inside(self):
        num_det = 91
        geom = ScanGeometry(64, 64, 1, num_det)
        out = ramp_filter(Sinogram(np.ones((1, num_det))), geom).data[0]
        k = np.arange(-(num_det - 1), num_det)
        taps = np.where(k == 0, 0.5, np.where(k % 2 == 1, -2.0 / (math.pi * np.where(k == 0, 1, k)) ** 2, 0.0))
        # output n sums the kernel over k = n - V + 1 .. n
        expected = np.array([taps[n : n + num_det].sum() for n in range(num_det)])
        assert np.allclose(out, expected, atol=1e-9)
        inner = out[num_det // 4 : 3 * num_det // 4]
        assert np.all(np.abs(inner) < 0.02)
        assert np.abs(inner).max() < 0.1 * out[0]

    def test_linear(self, geom16, rng):
        s1, s2 = rng.normal(size=(8, geom16.num_detectors)), rng.normal(size=(8, geom16.num_detectors))
        lhs = ramp_filter(Sinogram(0.7 * s1 - 1.3 * s2), geom16).data
        rhs = 0.7 * ramp_filter(Sinogram(s1), geom16).data - 1.3 * ramp_filter(Sinogram(s2), geom16).data
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_needs_two_detectors(self):
        geom = ScanGeometry(4, 4, 2, 1)
        with pytest.raises(ValidationError):
            ramp_filter(Sinogram(np.ones((2, 1))), geom)
