"""Classical Reconstruction - handles the FBP and SIRT baselines"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from .errors import ValidationError
from .grids import ImageGrid, Sinogram
from .projector import ScanGeometry, get_projector, interpolated_back_project, ramp_filter
from .settings import get_settings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SirtConfig:
    """SIRT iteration settings"""

    num_iters: int = 2000
    nonneg_clamp: bool = True

    def __post_init__(self):
        if self.num_iters < 1:
            raise ValidationError(f"num_iters must be >= 1, got {self.num_iters}")


def fbp(sino: Sinogram, geom: ScanGeometry) -> ImageGrid:
    """Filtered back projection with the Ram-Lak filter"""
    filtered = ramp_filter(sino, geom)
    image = interpolated_back_project(filtered, geom)
    return ImageGrid(image.data * (math.pi / (2.0 * geom.num_angles)))


def _safe_reciprocal(values: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    nonzero = values > 0
    out[nonzero] = 1.0 / values[nonzero]
    return out


def sirt(
    sino: Sinogram,
    geom: ScanGeometry,
    cfg: SirtConfig = SirtConfig(),
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> ImageGrid:
    """Simultaneous iterative reconstruction, x <- x + C A^T R (y - A x).

    Args:
        sino: measured sinogram
        geom: acquisition geometry
        cfg: iteration count and non-negativity clamp
        callback: called as callback(iteration, x) after every update
    """
    if sino.shape != (geom.num_angles, geom.num_detectors):
        raise ValidationError(
            f"sinogram shape {sino.shape} does not match geometry {(geom.num_angles, geom.num_detectors)}"
        )
    projector = get_projector(geom)
    row_weights = _safe_reciprocal(projector.row_sums())
    col_weights = _safe_reciprocal(projector.column_sums())
    y = sino.data.reshape(-1)

    x = np.zeros(geom.height * geom.width)
    for iteration in tqdm(range(1, cfg.num_iters + 1), desc="SIRT", disable=not get_settings().progress):
        residual = y - projector.matrix @ x
        x = x + col_weights * (projector.matrix_t @ (row_weights * residual))
        if cfg.nonneg_clamp:
            np.maximum(x, 0.0, out=x)
        if callback is not None:
            callback(iteration, x.reshape(geom.height, geom.width))

    logger.info("SIRT finished after %d iterations", cfg.num_iters)
    return ImageGrid(x.reshape(geom.height, geom.width))


def weighted_residual_norm(sino: Sinogram, geom: ScanGeometry, image: np.ndarray) -> float:
    """||y - A x||_R with R = diag(1 / row sums of A), the norm SIRT decreases"""
    projector = get_projector(geom)
    residual = sino.data.reshape(-1) - projector.matrix @ np.asarray(image).reshape(-1)
    return float(np.sqrt(np.sum(_safe_reciprocal(projector.row_sums()) * residual**2)))
