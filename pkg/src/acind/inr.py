"""Neural Field - handles the Fourier-feature sine MLP and its distribution head

The field maps a normalized pixel coordinate z = (i/H, j/W) to either a
material distribution D_z over K classes (distribution head) or a single
attenuation value (scalar head, the classic INR baseline):

    r(z)      = [sin(E z); cos(E z)]
    u_{i+1}   = sin(W_i u_i + b_i)          hidden layers
    logits    = W_L u_L + b_L               affine head
    D_z       = softmax(logits / T)
    g(z)      = sum_k D_z(k) * phi_k

Gradients are computed by hand; the forward render keeps every pre-activation
so the backward pass is exact.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .grids import AcVector, ImageGrid, LabelMap, Rng

logger = logging.getLogger(__name__)

# Rng sub-streams; layer i draws from LAYER_STREAM_BASE + i.
EMBEDDING_STREAM = 0
LAYER_STREAM_BASE = 100

DEFAULT_VARIANCE = 16.0
DEFAULT_FREQUENCIES = 128
DEFAULT_WIDTH = 256
DEFAULT_HIDDEN_LAYERS = 4

# Published totals, shown beside ours for reference only.
REFERENCE_SCALAR_TOTAL = 460_550
REFERENCE_DISTRIBUTION_TOTAL = 396_040

PHI = "phi"


class HeadMode(str, Enum):
    SCALAR = "scalar"
    DISTRIBUTION = "distribution"


@dataclass(frozen=True, eq=False)
class FourierEmbedding:
    """Frozen Gaussian frequency matrix E (m x 2)"""

    matrix: np.ndarray
    variance: float = DEFAULT_VARIANCE

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2 or matrix.shape[1] != 2 or matrix.shape[0] < 1:
            raise ValidationError(f"embedding matrix must be m x 2, got shape {matrix.shape}")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def create(cls, num_frequencies: int, rng: Rng, variance: float = DEFAULT_VARIANCE) -> "FourierEmbedding":
        if num_frequencies < 1:
            raise ValidationError(f"num_frequencies must be >= 1, got {num_frequencies}")
        if not variance > 0:
            raise ValidationError(f"variance must be positive, got {variance}")
        gen = rng.generator(EMBEDDING_STREAM)
        return cls(gen.normal(0.0, np.sqrt(variance), size=(num_frequencies, 2)), variance)

    @property
    def num_frequencies(self) -> int:
        return self.matrix.shape[0]

    @property
    def output_width(self) -> int:
        return 2 * self.num_frequencies


def embed(z: np.ndarray, emb: FourierEmbedding) -> np.ndarray:
    """[sin(Ez); cos(Ez)] for one coordinate (2,) or a batch (N, 2)"""
    z = np.asarray(z, dtype=np.float64)
    projected = z @ emb.matrix.T
    return np.concatenate([np.sin(projected), np.cos(projected)], axis=-1)


def pixel_coordinates(height: int, width: int) -> np.ndarray:
    """(i/H, j/W) for every pixel, row-major, shape (H*W, 2)"""
    ii, jj = np.meshgrid(np.arange(height) / height, np.arange(width) / width, indexing="ij")
    return np.stack([ii.reshape(-1), jj.reshape(-1)], axis=1)


def siren_init(shape: Tuple[int, int], layer_index: int, rng: Rng) -> Tuple[np.ndarray, np.ndarray]:
    """Weights uniform on (-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases"""
    fan_out, fan_in = shape
    if fan_out < 1 or fan_in < 1:
        raise ValidationError(f"layer shape must be positive, got {shape}")
    bound = np.sqrt(6.0 / fan_in)
    gen = rng.generator(LAYER_STREAM_BASE + layer_index)
    return gen.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)


@dataclass(frozen=True)
class NetworkConfig:
    """Embedding size and hidden stack shared by both heads"""

    num_frequencies: int = DEFAULT_FREQUENCIES
    hidden_width: int = DEFAULT_WIDTH
    hidden_layers: int = DEFAULT_HIDDEN_LAYERS
    variance: float = DEFAULT_VARIANCE

    def __post_init__(self):
        if self.num_frequencies < 1 or self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValidationError(f"network dimensions must be positive: {self}")

    def layer_widths(self, head_mode: HeadMode, num_materials: int = 1) -> List[int]:
        # The scalar head gets one more sine stage, then a single output neuron.
        if head_mode is HeadMode.SCALAR:
            return [2 * self.num_frequencies] + [self.hidden_width] * (self.hidden_layers + 1) + [1]
        return [2 * self.num_frequencies] + [self.hidden_width] * self.hidden_layers + [num_materials]


@dataclass(eq=False)
class MlpParams:
    """Sine MLP weights W_i (l_{i+1} x l_i) and biases b_i, plus the head settings"""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    head_mode: HeadMode = HeadMode.DISTRIBUTION
    temperature: Optional[float] = None

    def __post_init__(self):
        self.head_mode = HeadMode(self.head_mode)
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValidationError("MLP needs matching non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValidationError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i > 1 and w.shape[1] != self.weights[i - 2].shape[0]:
                raise ValidationError(
                    f"layer {i} expects width {w.shape[1]}, previous layer emits {self.weights[i - 2].shape[0]}"
                )
        if self.head_mode is HeadMode.DISTRIBUTION:
            if self.temperature is None or not 0.0 < self.temperature < 1.0:
                raise ValidationError(f"temperature must lie in (0, 1), got {self.temperature}")
        elif self.output_width != 1:
            raise ValidationError(f"scalar head must emit 1 value, got {self.output_width}")

    @classmethod
    def initialize(
        cls,
        widths: Sequence[int],
        rng: Rng,
        head_mode: HeadMode = HeadMode.DISTRIBUTION,
        temperature: Optional[float] = None,
    ) -> "MlpParams":
        layers = [siren_init((widths[i + 1], widths[i]), i + 1, rng) for i in range(len(widths) - 1)]
        return cls([w for w, _ in layers], [b for _, b in layers], head_mode, temperature)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_width(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def named_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            arrays[f"W{i}"] = w
            arrays[f"b{i}"] = b
        return arrays

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "MlpParams":
        """Same head, weights and biases taken from a name -> array mapping"""
        count = self.num_layers
        return MlpParams(
            [arrays[f"W{i}"] for i in range(1, count + 1)],
            [arrays[f"b{i}"] for i in range(1, count + 1)],
            self.head_mode,
            self.temperature,
        )


@dataclass(frozen=True, eq=False)
class Distribution:
    """K non-negative probabilities summing to one"""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64, copy=True).reshape(-1)
        if probs.size < 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError(f"not a probability distribution: {probs}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return self.probs.size


def _softmax_rows(logits: np.ndarray, temperature: float) -> np.ndarray:
    scaled = logits / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    weights = np.exp(scaled)
    return weights / weights.sum(axis=-1, keepdims=True)


def modulated_softmax(logits: Sequence[float], temperature: float) -> Distribution:
    """softmax(logits / T) with max-subtraction"""
    if not 0.0 < temperature < 1.0:
        raise ValidationError(f"temperature must lie in (0, 1), got {temperature}")
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(logits)):
        raise ValidationError("logits must be finite")
    return Distribution(_softmax_rows(logits, temperature))


def mlp_forward(r: np.ndarray, params: MlpParams) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Logits plus cached activations for a single input (2m,) or a batch (N, 2m).

    Returns:
        logits, activations u_1..u_L (u_1 = r), pre-activations of the sine layers
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != params.input_width:
        raise ValidationError(f"input width {r.shape[-1]} does not match first layer {params.input_width}")
    activations = [r]
    pre_activations = []
    u = r
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = u @ w.T + b
        u = np.sin(a)
        pre_activations.append(a)
        activations.append(u)
    logits = u @ params.weights[-1].T + params.biases[-1]
    return logits, activations, pre_activations


def _check_phi(params: MlpParams, phi: Optional[AcVector]) -> AcVector:
    if params.head_mode is not HeadMode.DISTRIBUTION:
        raise ValidationError("this operation needs a distribution head")
    if phi is None or len(phi) != params.output_width:
        raise ValidationError(
            f"AC vector length {None if phi is None else len(phi)} does not match head width {params.output_width}"
        )
    return phi


def g_value(z: Sequence[float], emb: FourierEmbedding, params: MlpParams, phi: AcVector) -> float:
    """Expected attenuation sum_k D_z(k) phi_k at one coordinate"""
    phi = _check_phi(params, phi)
    logits, _, _ = mlp_forward(embed(z, emb), params)
    dist = modulated_softmax(logits, params.temperature)
    return float(dist.probs @ phi.values)


@dataclass(eq=False)
class RenderCache:
    """Everything the backward pass needs from one full-image render"""

    height: int
    width: int
    params: MlpParams
    phi: Optional[AcVector]
    activations: List[np.ndarray]
    pre_activations: List[np.ndarray]
    logits: np.ndarray
    probs: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None


def forward_render(
    emb: FourierEmbedding, params: MlpParams, phi: Optional[AcVector], height: int, width: int
) -> RenderCache:
    """Pixel values (cache.values, unchecked) and the activations for backward"""
    if params.input_width != emb.output_width:
        raise ValidationError(f"embedding emits {emb.output_width} values, MLP expects {params.input_width}")
    r = embed(pixel_coordinates(height, width), emb)
    logits, activations, pre_activations = mlp_forward(r, params)
    cache = RenderCache(height, width, params, phi, activations, pre_activations, logits)
    if params.head_mode is HeadMode.DISTRIBUTION:
        phi = _check_phi(params, phi)
        cache.probs = _softmax_rows(logits, params.temperature)
        cache.values = cache.probs @ phi.values
    else:
        cache.values = logits[:, 0]
    return cache


def render_with_cache(
    emb: FourierEmbedding, params: MlpParams, phi: Optional[AcVector], height: int, width: int
) -> Tuple[ImageGrid, RenderCache]:
    """Render the H x W image and keep the activations for backward"""
    cache = forward_render(emb, params, phi, height, width)
    return ImageGrid(cache.values.reshape(height, width)), cache


def render_image(
    emb: FourierEmbedding, params: MlpParams, phi: Optional[AcVector], height: int, width: int
) -> ImageGrid:
    """Field evaluated at z = (i/H, j/W) for every pixel"""
    image, _ = render_with_cache(emb, params, phi, height, width)
    return image


def backward(image_grad: ImageGrid, cache: RenderCache) -> Dict[str, np.ndarray]:
    """dL/dW_i, dL/db_i (and dL/dphi for the distribution head) from dL/dX"""
    if image_grad.shape != (cache.height, cache.width):
        raise ValidationError(
            f"image gradient {image_grad.shape} does not match render {(cache.height, cache.width)}"
        )
    params = cache.params
    grad = image_grad.data.reshape(-1)
    grads: Dict[str, np.ndarray] = {}

    if params.head_mode is HeadMode.DISTRIBUTION:
        probs = cache.probs
        phi = cache.phi.values
        grads[PHI] = probs.T @ grad
        # Softmax Jacobian (diag(D) - D D^T) / T contracted with dX/dD = phi.
        d_logits = grad[:, None] * probs * (phi[None, :] - cache.values[:, None]) / params.temperature
    else:
        d_logits = grad[:, None]

    last = params.num_layers
    grads[f"W{last}"] = d_logits.T @ cache.activations[-1]
    grads[f"b{last}"] = d_logits.sum(axis=0)
    d_u = d_logits @ params.weights[-1]

    for i in range(last - 1, 0, -1):
        d_a = d_u * np.cos(cache.pre_activations[i - 1])
        grads[f"W{i}"] = d_a.T @ cache.activations[i - 1]
        grads[f"b{i}"] = d_a.sum(axis=0)
        if i > 1:
            d_u = d_a @ params.weights[i - 1]
    return grads


def extract_segmentation(params: MlpParams, emb: FourierEmbedding, height: int, width: int) -> LabelMap:
    """Per-pixel argmax of the material distribution; ties go to the lowest index"""
    if params.head_mode is not HeadMode.DISTRIBUTION:
        raise ValidationError("segmentation needs a distribution head")
    logits, _, _ = mlp_forward(embed(pixel_coordinates(height, width), emb), params)
    # argmax of the logits equals argmax of D_z and survives softmax underflow
    labels = np.argmax(logits, axis=1) + 1
    return LabelMap(labels.reshape(height, width), params.output_width)


@dataclass(frozen=True)
class ParameterCount:
    label: str
    network: int
    ac_values: int
    reference: int

    @property
    def total(self) -> int:
        return self.network + self.ac_values


def parameter_report(num_materials: int, config: NetworkConfig = NetworkConfig()) -> List[ParameterCount]:
    """Trainable totals for the scalar-head and distribution-head fields.

    The frozen embedding matrix is not counted.
    """
    if num_materials < 1:
        raise ValidationError(f"num_materials must be >= 1, got {num_materials}")
    rows = []
    for mode, label, reference, extra in (
        (HeadMode.SCALAR, "inr", REFERENCE_SCALAR_TOTAL, 0),
        (HeadMode.DISTRIBUTION, "ac-ind", REFERENCE_DISTRIBUTION_TOTAL, num_materials),
    ):
        widths = config.layer_widths(mode, num_materials)
        network = sum(widths[i + 1] * widths[i] + widths[i + 1] for i in range(len(widths) - 1))
        rows.append(ParameterCount(label, network, extra, reference))
    return rows
