"""Phantoms - handles synthetic multi-material ground truth and scan simulation"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from skimage.data import shepp_logan_phantom
from skimage.transform import resize

from .errors import ValidationError
from .grids import AcVector, ImageGrid, LabelMap, Rng, Sinogram
from .projector import ScanGeometry, forward_project

logger = logging.getLogger(__name__)

PHANTOM_STREAM = 1
NOISE_STREAM = 2

DEFAULT_VALUES = (0.0, 0.5, 1.0, 1.3, 1.8, 2.5)
DEFAULT_ELLIPSES = 5
BLEND_FACTOR = 4

# Body and inclusion discs as (row, col, radius) in units of the grid size,
# evaluated at pixel centres.
BARBAPAPA_BODY = (
    (0.50, 0.50, 0.28),
    (0.32, 0.42, 0.16),
    (0.30, 0.60, 0.14),
    (0.62, 0.30, 0.15),
    (0.66, 0.68, 0.16),
    (0.78, 0.50, 0.14),
)
BARBAPAPA_INCLUSIONS = (
    (0.45, 0.40, 0.06),
    (0.45, 0.60, 0.06),
    (0.62, 0.50, 0.08),
    (0.30, 0.60, 0.04),
)


@dataclass(frozen=True)
class MaterialSpec:
    """Attenuation value per material label; label 1 is air with value 0"""

    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValidationError("material spec needs at least one material")
        if values[0] != 0.0:
            raise ValidationError(f"background (label 1) must have value 0, got {values[0]}")
        if len(set(values)) != len(values):
            raise ValidationError(f"material values must be distinct, got {values}")
        object.__setattr__(self, "values", values)

    @classmethod
    def default(cls, num_materials: int) -> "MaterialSpec":
        if num_materials < 1:
            raise ValidationError(f"num_materials must be >= 1, got {num_materials}")
        values = list(DEFAULT_VALUES[:num_materials])
        while len(values) < num_materials:
            values.append(values[-1] + 0.5)
        return cls(tuple(values))

    @property
    def num_materials(self) -> int:
        return len(self.values)

    def acv(self) -> AcVector:
        return AcVector(self.values)


@dataclass(frozen=True, eq=False)
class PhantomPair:
    """Attenuation image, its material labels and the true AC vector.

    Unless boundary blending was requested, image[p] == acv[label[p] - 1].
    """

    image: ImageGrid
    labels: LabelMap
    acv: AcVector
    blended: bool = False

    def __post_init__(self):
        if self.image.shape != self.labels.shape:
            raise ValidationError(f"image {self.image.shape} and labels {self.labels.shape} differ in shape")
        if len(self.acv) != self.labels.num_materials:
            raise ValidationError(f"{len(self.acv)} AC values for {self.labels.num_materials} materials")
        if not self.blended and not np.array_equal(self.image.data, self.acv.values[self.labels.labels - 1]):
            raise ValidationError("phantom image does not match its label map")

    @property
    def num_materials(self) -> int:
        return self.labels.num_materials


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in pixel-index coordinates; axis a runs along rows when angle = 0"""

    center_i: float
    center_j: float
    axis_a: float
    axis_b: float
    angle: float
    label: int

    def contains(self, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
        di, dj = ii - self.center_i, jj - self.center_j
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = di * c + dj * s
        v = -di * s + dj * c
        return (u / self.axis_a) ** 2 + (v / self.axis_b) ** 2 <= 1.0

    def half_extent(self) -> Tuple[float, float]:
        """Half the bounding-box size along rows and columns"""
        c, s = math.cos(self.angle), math.sin(self.angle)
        return (
            math.hypot(self.axis_a * c, self.axis_b * s),
            math.hypot(self.axis_a * s, self.axis_b * c),
        )

    def fits(self, height: int, width: int) -> bool:
        ext_i, ext_j = self.half_extent()
        return (
            self.center_i - ext_i >= 0
            and self.center_i + ext_i <= height - 1
            and self.center_j - ext_j >= 0
            and self.center_j + ext_j <= width - 1
        )


def paint_ellipses(height: int, width: int, ellipses: Sequence[Ellipse], offsets: Sequence[float] = (0.0,)) -> np.ndarray:
    """Painter's-order label maps sampled at pixel index + each offset, shape (S, S, H, W)"""
    count = len(offsets)
    out = np.ones((count, count, height, width), dtype=np.int64)
    rows, cols = np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64)
    for a, di in enumerate(offsets):
        for b, dj in enumerate(offsets):
            ii, jj = np.meshgrid(rows + di, cols + dj, indexing="ij")
            for ellipse in ellipses:
                out[a, b][ellipse.contains(ii, jj)] = ellipse.label
    return out


def _sample_ellipse(gen: np.random.Generator, height: int, width: int, label: int, body: Optional[Ellipse] = None) -> Ellipse:
    for _ in range(1000):
        angle = float(gen.uniform(0.0, math.pi))
        if body is None:
            ci = height / 2.0 + gen.uniform(-0.05, 0.05) * height
            cj = width / 2.0 + gen.uniform(-0.05, 0.05) * width
            a = gen.uniform(0.30, 0.42) * height
            b = gen.uniform(0.30, 0.42) * width
        else:
            # centre somewhere in the inner half of the body
            rho, psi = 0.5 * math.sqrt(gen.uniform()), gen.uniform(0.0, 2 * math.pi)
            u, v = rho * body.axis_a * math.cos(psi), rho * body.axis_b * math.sin(psi)
            c, s = math.cos(body.angle), math.sin(body.angle)
            ci = body.center_i + u * c - v * s
            cj = body.center_j + u * s + v * c
            a = gen.uniform(0.06, 0.18) * height
            b = gen.uniform(0.06, 0.18) * width
        ellipse = Ellipse(float(ci), float(cj), float(max(a, 1.0)), float(max(b, 1.0)), angle, label)
        if ellipse.fits(height, width):
            return ellipse
    raise ValidationError(f"could not place an ellipse inside a {height}x{width} grid")


def random_ellipses(seed: int, height: int, width: int, num_materials: int, num_ellipses: int) -> List[Ellipse]:
    """A large body ellipse followed by smaller ones inside it.

    The first K-1 ellipses take a random permutation of the non-air materials,
    later ones draw a material at random.
    """
    gen = Rng(seed).generator(PHANTOM_STREAM)
    materials = list(gen.permutation(np.arange(2, num_materials + 1)))
    ellipses: List[Ellipse] = []
    for n in range(num_ellipses):
        label = int(materials[n]) if n < len(materials) else int(gen.integers(2, num_materials + 1))
        body = ellipses[0] if ellipses else None
        ellipses.append(_sample_ellipse(gen, height, width, label, body))
    return ellipses


def _pair_from_ellipses(
    height: int, width: int, spec: MaterialSpec, ellipses: Sequence[Ellipse], blend: bool
) -> PhantomPair:
    labels = paint_ellipses(height, width, ellipses)[0, 0]
    values = np.asarray(spec.values)
    image = values[labels - 1]
    if blend:
        offsets = (np.arange(BLEND_FACTOR) + 0.5) / BLEND_FACTOR - 0.5
        image = values[paint_ellipses(height, width, ellipses, offsets) - 1].mean(axis=(0, 1))
    return PhantomPair(ImageGrid(image), LabelMap(labels, spec.num_materials), spec.acv(), blended=blend)


def ellipse_material_phantom(
    seed: int,
    height: int,
    width: int,
    spec: MaterialSpec,
    num_ellipses: int = DEFAULT_ELLIPSES,
    blend: bool = False,
) -> PhantomPair:
    """Seeded random ellipses of constant material over an air background.

    Args:
        seed: Rng seed; identical seeds give identical phantoms
        height, width: grid size
        spec: material values, label 1 is air
        num_ellipses: ellipse count, painted in order so later ones overwrite
        blend: average AC values over 4x4 sub-samples at material boundaries
    """
    if num_ellipses < 0:
        raise ValidationError(f"num_ellipses must be >= 0, got {num_ellipses}")
    if num_ellipses == 0 and spec.num_materials > 1:
        raise ValidationError(f"{spec.num_materials} materials need at least one ellipse")
    if num_ellipses > 0 and spec.num_materials == 1:
        raise ValidationError("ellipses need at least one non-air material")
    ellipses = random_ellipses(seed, height, width, spec.num_materials, num_ellipses)
    logger.debug("Ellipse phantom seed=%d: %s", seed, ellipses)
    return _pair_from_ellipses(height, width, spec, ellipses, blend)


def barbapapa_like_phantom(height: int, width: int, ac_values: Sequence[float] = (0.0, 1.0, 2.0)) -> PhantomPair:
    """Rounded blob of material 2 with disc inclusions of material 3 over air"""
    if len(ac_values) != 3:
        raise ValidationError(f"Barbapapa-like phantom takes 3 AC values, got {len(ac_values)}")
    spec = MaterialSpec(tuple(ac_values))

    rows = (np.arange(height) + 0.5) / height
    cols = (np.arange(width) + 0.5) / width
    ii, jj = np.meshgrid(rows, cols, indexing="ij")
    labels = np.ones((height, width), dtype=np.int64)
    for discs, label in ((BARBAPAPA_BODY, 2), (BARBAPAPA_INCLUSIONS, 3)):
        for ci, cj, radius in discs:
            labels[(ii - ci) ** 2 + (jj - cj) ** 2 <= radius**2] = label
    image = np.asarray(spec.values)[labels - 1]
    return PhantomPair(ImageGrid(image), LabelMap(labels, 3), spec.acv())


def shepp_logan(size: int) -> ImageGrid:
    """Shepp-Logan head phantom resampled to size x size"""
    return ImageGrid(resize(shepp_logan_phantom(), (size, size), anti_aliasing=True))


def boundary_fraction(labels: LabelMap) -> float:
    """Share of pixels whose right or lower neighbour carries another label"""
    data = labels.labels
    boundary = np.zeros(data.shape, dtype=bool)
    boundary[:, :-1] |= data[:, :-1] != data[:, 1:]
    boundary[:-1, :] |= data[:-1, :] != data[1:, :]
    return float(boundary.mean())


def add_detector_noise(sino: Sinogram, noise_sigma: float, seed: int = 0) -> Sinogram:
    """Sinogram plus seeded zero-mean Gaussian noise (unchanged when noise_sigma is 0)"""
    if noise_sigma < 0:
        raise ValidationError(f"noise_sigma must be non-negative, got {noise_sigma}")
    if noise_sigma == 0:
        return sino
    gen = Rng(seed).generator(NOISE_STREAM)
    logger.info("Adding Gaussian detector noise with sigma %g", noise_sigma)
    return Sinogram(sino.data + gen.normal(0.0, noise_sigma, size=sino.shape))


def simulate_scan(pair: PhantomPair, geom: ScanGeometry, noise_sigma: float = 0.0, seed: int = 0) -> Sinogram:
    """Projections of the phantom, with detector noise when noise_sigma > 0"""
    return add_detector_noise(forward_project(pair.image, geom), noise_sigma, seed)
