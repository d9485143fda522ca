"""Metrics - handles image-quality and vector-distance measures"""

import math
from typing import Sequence, Union

import numpy as np
from skimage.metrics import structural_similarity

from .errors import ValidationError
from .grids import ImageGrid

# Returned by psnr when the two grids are identical.
PSNR_IDENTICAL = math.inf

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


def _check_pair(reference: ImageGrid, test: ImageGrid, data_range: float):
    if reference.shape != test.shape:
        raise ValidationError(f"dimension mismatch: {reference.shape} vs {test.shape}")
    if not data_range > 0:
        raise ValidationError(f"data_range must be positive, got {data_range}")


def psnr(reference: ImageGrid, test: ImageGrid, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the grids are identical"""
    _check_pair(reference, test, data_range)
    mse = float(np.mean((reference.data - test.data) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(reference: ImageGrid, test: ImageGrid, data_range: float) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5)"""
    _check_pair(reference, test, data_range)
    if min(reference.shape) < SSIM_WINDOW:
        raise ValidationError(
            f"grid {reference.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    return float(
        structural_similarity(
            reference.data,
            test.data,
            data_range=data_range,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )


def l2_distance(a: Union[Sequence[float], np.ndarray], b: Union[Sequence[float], np.ndarray]) -> float:
    """Euclidean distance between two equal-length vectors"""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValidationError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.sqrt(np.sum((a - b) ** 2)))
