"""Grids - handles the shared image, sinogram and label containers

All containers are immutable value objects: the wrapped arrays are copied to
float64 (or int64 for labels) and marked read-only on construction.
"""

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import ValidationError

ArrayLike = Union[np.ndarray, Iterable]


def _frozen(values: ArrayLike, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """H x W field of attenuation coefficients, row-major"""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"image must be a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("image contains non-finite values")
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, height: int, width: int) -> "ImageGrid":
        return cls(np.zeros((height, width)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def data_range(self) -> float:
        """max - min of the pixel values"""
        return float(self.data.max() - self.data.min())

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageGrid) and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Sinogram:
    """U x V measurement array, angle-major"""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"sinogram must be a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("sinogram contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def num_angles(self) -> int:
        return self.data.shape[0]

    @property
    def num_detectors(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __eq__(self, other) -> bool:
        return isinstance(other, Sinogram) and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabelMap:
    """H x W material labels in 1..K"""

    labels: np.ndarray
    num_materials: int

    def __post_init__(self):
        labels = _frozen(self.labels, np.int64)
        if labels.ndim != 2:
            raise ValidationError(f"label map must be 2-D, got shape {labels.shape}")
        if self.num_materials < 1:
            raise ValidationError(f"num_materials must be >= 1, got {self.num_materials}")
        if labels.size and (labels.min() < 1 or labels.max() > self.num_materials):
            raise ValidationError(f"labels must lie in [1, {self.num_materials}]")
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    def relabel(self, order: np.ndarray) -> "LabelMap":
        """Map label k to order[k-1] (order is a permutation of 1..K)"""
        lookup = np.concatenate([[0], np.asarray(order, dtype=np.int64)])
        return LabelMap(lookup[self.labels], self.num_materials)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabelMap)
            and self.num_materials == other.num_materials
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AcVector:
    """One attenuation coefficient per material class"""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, np.float64).reshape(-1)
        if values.size < 1:
            raise ValidationError("AC vector must hold at least one value")
        if not np.all(np.isfinite(values)):
            raise ValidationError("AC vector contains non-finite values")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def sorted(self) -> "AcVector":
        return AcVector(np.sort(self.values))

    def __eq__(self, other) -> bool:
        return isinstance(other, AcVector) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class Rng:
    """Seeded PCG64 stream (numpy's default bit generator).

    PCG64 seeded through SeedSequence produces the same stream on every
    platform, so every randomized artifact is reproducible from its seed.
    """

    seed: int
    algorithm: str = "PCG64"

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def generator(self, stream: int = 0) -> np.random.Generator:
        """Independent generator for a named sub-stream"""
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, stream])))


def as_image(values: Union[ImageGrid, np.ndarray]) -> ImageGrid:
    return values if isinstance(values, ImageGrid) else ImageGrid(values)
