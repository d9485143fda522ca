"""Projector - handles the parallel-beam Radon transform and its adjoint

Geometry conventions:
    - The image occupies H x W unit pixels centred on the rotation axis.
      Pixel (i, j) covers x in [j - W/2, j - W/2 + 1) and
      y in [i - H/2, i - H/2 + 1).
    - Ray (theta, s) is the line x*cos(theta) + y*sin(theta) = s.
    - Detector v sits at s_v = (v - (V - 1)/2) * spacing.
    - Angles are equiangular over [0, pi): theta_k = k*pi/U.

The system matrix is built once per geometry by exact-intersection (Siddon)
ray tracing and cached; back_project is its literal transpose.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse

from .errors import ValidationError
from .grids import ImageGrid, Sinogram
from .settings import worker_count

logger = logging.getLogger(__name__)

# Trig values below this magnitude are treated as exact zeros.
_SNAP = 1e-12
# Segments shorter than this come from corner crossings and are dropped.
_MIN_SEGMENT = 1e-12
# Boundary test tolerance and the sideways shift used to trace both neighbours.
_GRID_TOL = 1e-9
_GRID_NUDGE = 1e-6


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam acquisition geometry and the image domain it acts on"""

    height: int
    width: int
    num_angles: int
    num_detectors: int
    detector_spacing: float = 1.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"image dimensions must be positive, got {self.height}x{self.width}")
        if self.num_angles < 1 or self.num_detectors < 1:
            raise ValidationError(
                f"num_angles and num_detectors must be >= 1, got {self.num_angles}, {self.num_detectors}"
            )
        if not self.detector_spacing > 0:
            raise ValidationError(f"detector_spacing must be positive, got {self.detector_spacing}")

    @classmethod
    def parallel(
        cls,
        height: int,
        width: int,
        num_angles: int,
        num_detectors: Optional[int] = None,
        detector_spacing: float = 1.0,
    ) -> "ScanGeometry":
        """Geometry whose detector covers the full image diagonal by default"""
        if num_detectors is None:
            num_detectors = math.ceil(math.sqrt(2.0) * max(height, width) / detector_spacing)
        return cls(height, width, num_angles, num_detectors, float(detector_spacing))

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.num_angles) * (np.pi / self.num_angles)

    @property
    def detector_positions(self) -> np.ndarray:
        return (np.arange(self.num_detectors) - (self.num_detectors - 1) / 2.0) * self.detector_spacing

    @property
    def num_rays(self) -> int:
        return self.num_angles * self.num_detectors

    def with_angles(self, num_angles: int) -> "ScanGeometry":
        return ScanGeometry(self.height, self.width, num_angles, self.num_detectors, self.detector_spacing)


@dataclass(frozen=True)
class RayPath:
    """Pixels crossed by one ray and the intersection length in each"""

    pixels: np.ndarray
    lengths: np.ndarray

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())


def _direction(theta: float) -> Tuple[float, float]:
    c, s = math.cos(theta), math.sin(theta)
    if abs(c) < _SNAP:
        c = 0.0
    if abs(s) < _SNAP:
        s = 0.0
    return c, s


def _axis_range(origin: float, step: float, lo: float, hi: float) -> Tuple[float, float]:
    """Parameter interval during which origin + t*step lies in [lo, hi)"""
    if step == 0.0:
        if lo <= origin < hi:
            return -math.inf, math.inf
        return math.inf, -math.inf
    t0 = (lo - origin) / step
    t1 = (hi - origin) / step
    return min(t0, t1), max(t0, t1)


def _on_grid_line(coord: float, size: int) -> bool:
    """True when coord lies on one of the size + 1 pixel boundaries"""
    position = coord + size / 2.0
    nearest = round(position)
    return abs(position - nearest) < _GRID_TOL and 0 <= nearest <= size


def _split_path(left: RayPath, right: RayPath) -> RayPath:
    """Half of each neighbouring path, duplicate pixels merged"""
    pixels = np.concatenate([left.pixels, right.pixels])
    lengths = 0.5 * np.concatenate([left.lengths, right.lengths])
    merged, inverse = np.unique(pixels, return_inverse=True)
    totals = np.zeros(merged.size)
    np.add.at(totals, inverse, lengths)
    return RayPath(merged, totals)


def _trace(height: int, width: int, x0: float, y0: float, dx: float, dy: float) -> RayPath:
    half_w, half_h = width / 2.0, height / 2.0

    tx_min, tx_max = _axis_range(x0, dx, -half_w, half_w)
    ty_min, ty_max = _axis_range(y0, dy, -half_h, half_h)
    t_enter = max(tx_min, ty_min)
    t_exit = min(tx_max, ty_max)
    if not t_exit > t_enter:
        return RayPath(np.empty(0, dtype=np.int64), np.empty(0))

    crossings = [np.array([t_enter, t_exit])]
    if dx != 0.0:
        tx = (np.arange(width + 1) - half_w - x0) / dx
        crossings.append(tx[(tx > t_enter) & (tx < t_exit)])
    if dy != 0.0:
        ty = (np.arange(height + 1) - half_h - y0) / dy
        crossings.append(ty[(ty > t_enter) & (ty < t_exit)])
    t = np.unique(np.concatenate(crossings))

    lengths = np.diff(t)
    mids = 0.5 * (t[:-1] + t[1:])
    cols = np.floor(x0 + mids * dx + half_w).astype(np.int64)
    rows = np.floor(y0 + mids * dy + half_h).astype(np.int64)
    keep = (lengths > _MIN_SEGMENT) & (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    return RayPath(rows[keep] * width + cols[keep], lengths[keep])


def trace_ray(height: int, width: int, cos_t: float, sin_t: float, offset: float) -> RayPath:
    """Siddon traversal of the ray x*cos + y*sin = offset through the grid.

    An axis-aligned ray lying on a pixel boundary is shared equally by the
    pixels on either side, so a quarter turn of the image permutes the
    sinogram exactly.
    """
    x0, y0 = offset * cos_t, offset * sin_t
    dx, dy = -sin_t, cos_t
    if dx == 0.0 and _on_grid_line(x0, width):
        return _split_path(
            _trace(height, width, x0 - _GRID_NUDGE, y0, dx, dy),
            _trace(height, width, x0 + _GRID_NUDGE, y0, dx, dy),
        )
    if dy == 0.0 and _on_grid_line(y0, height):
        return _split_path(
            _trace(height, width, x0, y0 - _GRID_NUDGE, dx, dy),
            _trace(height, width, x0, y0 + _GRID_NUDGE, dx, dy),
        )
    return _trace(height, width, x0, y0, dx, dy)


class ParallelBeamProjector:
    """Sparse system matrix A for one ScanGeometry"""

    def __init__(self, geom: ScanGeometry, num_threads: Optional[int] = None):
        self.geom = geom
        self.num_threads = num_threads or worker_count()
        self.matrix = self._build_matrix()
        self.matrix_t = self.matrix.T.tocsr()
        logger.info(
            "Built %dx%d system matrix (%d nonzeros) with %d threads",
            self.matrix.shape[0], self.matrix.shape[1], self.matrix.nnz, self.num_threads,
        )

    def _trace_angle(self, angle_index: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        geom = self.geom
        cos_t, sin_t = _direction(float(geom.angles[angle_index]))
        rows: List[np.ndarray] = []
        cols: List[np.ndarray] = []
        vals: List[np.ndarray] = []
        for v, offset in enumerate(geom.detector_positions):
            path = trace_ray(geom.height, geom.width, cos_t, sin_t, float(offset))
            rows.append(np.full(path.pixels.size, angle_index * geom.num_detectors + v, dtype=np.int64))
            cols.append(path.pixels)
            vals.append(path.lengths)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def _build_matrix(self) -> sparse.csr_matrix:
        geom = self.geom
        # Angles are traced independently and assembled in angle order, so the
        # matrix is identical for every thread count.
        with ThreadPoolExecutor(max_workers=self.num_threads) as executor:
            parts = list(executor.map(self._trace_angle, range(geom.num_angles)))
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        vals = np.concatenate([p[2] for p in parts])
        shape = (geom.num_rays, geom.height * geom.width)
        return sparse.csr_matrix((vals, (rows, cols)), shape=shape)

    def ray_path(self, angle_index: int, detector_index: int) -> RayPath:
        """Stored path of one ray (row of A)"""
        row = self.matrix.getrow(angle_index * self.geom.num_detectors + detector_index)
        order = np.argsort(row.indices, kind="stable")
        return RayPath(row.indices[order].astype(np.int64), row.data[order])

    def forward(self, image: np.ndarray) -> np.ndarray:
        geom = self.geom
        return (self.matrix @ image.reshape(-1)).reshape(geom.num_angles, geom.num_detectors)

    def adjoint(self, sino: np.ndarray) -> np.ndarray:
        geom = self.geom
        return (self.matrix_t @ sino.reshape(-1)).reshape(geom.height, geom.width)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).reshape(-1)

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).reshape(-1)


@lru_cache(maxsize=16)
def get_projector(geom: ScanGeometry) -> ParallelBeamProjector:
    """Cached projector for a geometry"""
    return ParallelBeamProjector(geom)


def _check_image(image: ImageGrid, geom: ScanGeometry):
    if image.shape != (geom.height, geom.width):
        raise ValidationError(
            f"image shape {image.shape} does not match geometry {(geom.height, geom.width)}"
        )


def _check_sino(sino: Sinogram, geom: ScanGeometry):
    if sino.shape != (geom.num_angles, geom.num_detectors):
        raise ValidationError(
            f"sinogram shape {sino.shape} does not match geometry {(geom.num_angles, geom.num_detectors)}"
        )


def forward_project(image: ImageGrid, geom: ScanGeometry) -> Sinogram:
    """Exact-intersection line integrals of the image along every ray"""
    _check_image(image, geom)
    return Sinogram(get_projector(geom).forward(image.data))


def back_project(sino: Sinogram, geom: ScanGeometry) -> ImageGrid:
    """Transpose of forward_project under the same ray weights"""
    _check_sino(sino, geom)
    return ImageGrid(get_projector(geom).adjoint(sino.data))


def padded_length(num_detectors: int) -> int:
    """2 * next power of two >= num_detectors"""
    return 2 * (1 << (num_detectors - 1).bit_length())


def ram_lak_kernel(length: int, spacing: float = 1.0) -> np.ndarray:
    """Spatial Ram-Lak samples h(n) for n = -length/2 .. length/2 - 1"""
    n = np.arange(-(length // 2), length - length // 2)
    kernel = np.zeros(length)
    kernel[n == 0] = 1.0 / (2.0 * spacing**2)
    odd = n % 2 == 1
    kernel[odd] = -2.0 / (np.pi * n[odd] * spacing) ** 2
    return kernel


def ramp_response(num_detectors: int, spacing: float = 1.0) -> np.ndarray:
    """Frequency response of the Ram-Lak filter on the padded FFT grid"""
    length = padded_length(num_detectors)
    kernel = ram_lak_kernel(length, spacing)
    return np.real(np.fft.fft(np.fft.ifftshift(kernel)))


def ramp_filter(sino: Sinogram, geom: ScanGeometry) -> Sinogram:
    """Ram-Lak filtering of every detector row via zero-padded FFT"""
    _check_sino(sino, geom)
    num_det = geom.num_detectors
    if num_det < 2:
        raise ValidationError("ramp filtering needs at least two detectors")
    length = padded_length(num_det)
    response = ramp_response(num_det, geom.detector_spacing)
    padded = np.zeros((geom.num_angles, length))
    padded[:, :num_det] = sino.data
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * response, axis=1))
    return Sinogram(geom.detector_spacing * filtered[:, :num_det])


def interpolated_back_project(sino: Sinogram, geom: ScanGeometry) -> ImageGrid:
    """Pixel-driven backprojection with linear interpolation between detector bins"""
    _check_sino(sino, geom)
    xs = np.arange(geom.width) - geom.width / 2.0 + 0.5
    ys = np.arange(geom.height) - geom.height / 2.0 + 0.5
    grid_x, grid_y = np.meshgrid(xs, ys)
    bins = np.arange(geom.num_detectors, dtype=np.float64)
    centre = (geom.num_detectors - 1) / 2.0
    image = np.zeros((geom.height, geom.width))
    for k, theta in enumerate(geom.angles):
        cos_t, sin_t = _direction(float(theta))
        u = (grid_x * cos_t + grid_y * sin_t) / geom.detector_spacing + centre
        image += np.interp(u, bins, sino.data[k], left=0.0, right=0.0)
    return ImageGrid(image)
