"""Segmentation - handles Multi-Otsu thresholding and region statistics

Multi-Otsu uses the lookup-table formulation: with prefix sums P (counts) and
S (count-weighted bin index) the between-class variance of a partition is,
up to constants, the sum over classes of S_j^2 / P_j, so each class costs one
table lookup. Bin indices stand in for bin values; the optimum is unchanged
by that affine substitution.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import SegmentationError, ValidationError
from .grids import AcVector, ImageGrid, LabelMap

logger = logging.getLogger(__name__)

DEFAULT_BINS = 256
COARSE_BINS = 64
REFINE_RADIUS = 2
MAX_EXHAUSTIVE_CLASSES = 4
MAX_CLASSES = 6
_TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Histogram:
    """Pixel counts over equal-width bins spanning [min, max] of an image"""

    counts: np.ndarray
    edges: np.ndarray

    @classmethod
    def from_image(cls, image: ImageGrid, num_bins: int = DEFAULT_BINS) -> "Histogram":
        values = image.data.reshape(-1)
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            raise SegmentationError("cannot build a histogram of a constant image")
        counts, edges = np.histogram(values, bins=num_bins, range=(lo, hi))
        return cls(counts.astype(np.int64), edges)

    @property
    def num_bins(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def variance_table(self) -> np.ndarray:
        """table[u, v] = S(u..v)^2 / P(u..v) for the class of bins u..v (0 if empty)"""
        counts = self.counts.astype(np.float64)
        p = np.concatenate([[0.0], np.cumsum(counts)])
        s = np.concatenate([[0.0], np.cumsum(counts * np.arange(self.num_bins))])
        weight = p[None, 1:] - p[:-1, None]
        moment = s[None, 1:] - s[:-1, None]
        table = np.zeros_like(weight)
        valid = (weight > 0) & np.triu(np.ones_like(weight, dtype=bool))
        table[valid] = moment[valid] ** 2 / weight[valid]
        return table


@dataclass(frozen=True, eq=False)
class MaskSet:
    """K disjoint binary masks covering the grid"""

    masks: np.ndarray

    def __post_init__(self):
        masks = np.array(self.masks, dtype=bool, copy=True)
        if masks.ndim != 3:
            raise ValidationError(f"mask stack must be K x H x W, got shape {masks.shape}")
        if not np.all(masks.sum(axis=0) == 1):
            raise ValidationError("masks must partition the grid")
        masks.setflags(write=False)
        object.__setattr__(self, "masks", masks)

    @classmethod
    def from_labels(cls, labels: np.ndarray, num_classes: int) -> "MaskSet":
        return cls(np.stack([labels == k for k in range(1, num_classes + 1)]))

    @property
    def num_classes(self) -> int:
        return self.masks.shape[0]

    def labels(self) -> LabelMap:
        return LabelMap(np.argmax(self.masks, axis=0) + 1, self.num_classes)

    def reordered(self, order: Sequence[int]) -> "MaskSet":
        """Masks taken in the given order (0-based indices)"""
        return MaskSet(self.masks[list(order)])


@dataclass(frozen=True)
class RegionMeans:
    """Per-region mean of non-zero values, with degenerate-region flags"""

    values: AcVector
    degenerate: Tuple[bool, ...]

    @property
    def has_degenerate(self) -> bool:
        return any(self.degenerate)


def _better(value: float, best: float) -> bool:
    return value > best + _TIE_RTOL * max(abs(best), 1e-300)


def _exhaustive_search(table: np.ndarray, num_classes: int) -> Tuple[int, ...]:
    """Lexicographically smallest optimal tuple of last-bin indices"""
    num_bins = table.shape[0]
    last = num_bins - 1
    if num_classes == 2:
        t = np.arange(last)
        values = table[0, t] + table[t + 1, last]
        best = values.max()
        return (int(np.flatnonzero(values >= best - _TIE_RTOL * abs(best))[0]),)

    best_value = -np.inf
    best_tuple: Optional[Tuple[int, ...]] = None
    for prefix in itertools.combinations(range(last), num_classes - 3):
        start = prefix[-1] + 1 if prefix else 0
        base = 0.0
        prev = 0
        for t in prefix:
            base += table[prev, t]
            prev = t + 1
        candidates = np.arange(start, last)
        if candidates.size < 2:
            continue
        a = candidates[:, None]
        b = candidates[None, :]
        values = base + table[prev, a] + table[a + 1, b] + table[b + 1, last]
        values = np.where(b > a, values, -np.inf)
        local = values.max()
        if not np.isfinite(local) or not _better(local, best_value):
            continue
        flat = np.flatnonzero(values >= local - _TIE_RTOL * abs(local))[0]
        i, j = np.unravel_index(flat, values.shape)
        best_value = local
        best_tuple = prefix + (int(candidates[i]), int(candidates[j]))
    return best_tuple


def _tuple_value(table: np.ndarray, thresholds: Sequence[int]) -> float:
    last = table.shape[0] - 1
    value, prev = 0.0, 0
    for t in thresholds:
        value += table[prev, t]
        prev = t + 1
    return value + table[prev, last]


def _refine(table: np.ndarray, guess: Sequence[int]) -> Tuple[int, ...]:
    """Exhaustive search within +/- REFINE_RADIUS bins of each guessed index"""
    last = table.shape[0] - 1
    ranges = [
        range(max(0, g - REFINE_RADIUS), min(last - 1, g + REFINE_RADIUS) + 1) for g in guess
    ]
    best_value, best_tuple = -np.inf, tuple(guess)
    for candidate in itertools.product(*ranges):
        if any(b <= a for a, b in zip(candidate, candidate[1:])):
            continue
        value = _tuple_value(table, candidate)
        if _better(value, best_value):
            best_value, best_tuple = value, candidate
    return best_tuple


def multi_otsu_indices(image: ImageGrid, num_classes: int, num_bins: int = DEFAULT_BINS) -> Tuple[Histogram, Tuple[int, ...]]:
    """Histogram plus the last-bin index of each of the first K-1 classes"""
    if num_classes < 2:
        raise SegmentationError(f"Multi-Otsu needs at least 2 classes, got {num_classes}")
    if num_classes > MAX_CLASSES:
        raise SegmentationError(f"Multi-Otsu supports at most {MAX_CLASSES} classes, got {num_classes}")
    if num_classes > num_bins:
        raise SegmentationError(f"{num_classes} classes cannot be split from {num_bins} bins")
    distinct = np.unique(image.data).size
    if distinct < num_classes:
        raise SegmentationError(f"image has {distinct} distinct values, fewer than {num_classes} classes")

    hist = Histogram.from_image(image, num_bins)
    occupied = int(np.count_nonzero(hist.counts))
    if occupied < num_classes:
        raise SegmentationError(f"only {occupied} histogram bins are occupied, fewer than {num_classes} classes")

    table = hist.variance_table()
    if num_classes <= MAX_EXHAUSTIVE_CLASSES or num_bins <= COARSE_BINS:
        return hist, _exhaustive_search(table, num_classes)

    coarse_hist, coarse = multi_otsu_indices(image, num_classes, COARSE_BINS)
    scale = num_bins / COARSE_BINS
    guess = [int(round((c + 1) * scale)) - 1 for c in coarse]
    logger.debug("Coarse Multi-Otsu indices %s refined around %s", coarse, guess)
    return hist, _refine(table, guess)


def multi_otsu(image: ImageGrid, num_classes: int, num_bins: int = DEFAULT_BINS) -> np.ndarray:
    """K-1 strictly increasing thresholds maximizing between-class variance"""
    hist, indices = multi_otsu_indices(image, num_classes, num_bins)
    return hist.edges[np.asarray(indices) + 1]


def masks_from_thresholds(image: ImageGrid, thresholds: Sequence[float]) -> MaskSet:
    """Label j for t_{j-1} < v <= t_j; values equal to a threshold go to the lower region"""
    thresholds = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    if np.any(np.diff(thresholds) <= 0):
        raise ValidationError(f"thresholds must be strictly increasing, got {thresholds}")
    labels = np.searchsorted(thresholds, image.data, side="left") + 1
    return MaskSet.from_labels(labels, thresholds.size + 1)


def region_means(image: ImageGrid, masks: MaskSet) -> RegionMeans:
    """Mean of the non-zero pixel values inside each mask (0 for an all-zero region)"""
    if masks.masks.shape[1:] != image.shape:
        raise ValidationError(f"mask shape {masks.masks.shape[1:]} does not match image {image.shape}")
    values, degenerate = [], []
    for k, mask in enumerate(masks.masks, start=1):
        region = image.data[mask]
        nonzero = region[region != 0.0]
        if nonzero.size == 0:
            logger.warning("Region %d has no non-zero pixels; its mean is set to 0", k)
            values.append(0.0)
            degenerate.append(True)
        else:
            values.append(float(nonzero.mean()))
            degenerate.append(False)
    return RegionMeans(AcVector(values), tuple(degenerate))


def order_by_means(masks: MaskSet, means: RegionMeans) -> Tuple[MaskSet, AcVector]:
    """Masks and means relabelled so the means ascend"""
    order = np.argsort(means.values.values, kind="stable")
    return masks.reordered(order), AcVector(means.values.values[order])


def interior_mask(labels: LabelMap) -> np.ndarray:
    """True where the 3x3 neighbourhood holds a single label (drops the 1-pixel boundary band)"""
    lo = ndimage.minimum_filter(labels.labels, size=3, mode="nearest")
    hi = ndimage.maximum_filter(labels.labels, size=3, mode="nearest")
    return lo == hi


def pixel_accuracy(predicted: LabelMap, truth: LabelMap, exclude_boundary: bool = True) -> float:
    """Fraction of matching labels, optionally ignoring the true boundary band"""
    if predicted.shape != truth.shape:
        raise ValidationError(f"label maps differ in shape: {predicted.shape} vs {truth.shape}")
    keep = interior_mask(truth) if exclude_boundary else np.ones(truth.shape, dtype=bool)
    if not keep.any():
        return 0.0
    return float(np.mean(predicted.labels[keep] == truth.labels[keep]))
