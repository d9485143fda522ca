"""Training Pipeline - handles INR, AC-IND and AC-IND+ reconstruction runs

One run jointly fits the neural field and (for the distribution methods) the
AC vector to a sinogram by minimizing the projection loss ||A X - y||:

    render X -> project -> loss -> dL/dX = A^T r / ||r|| -> backward -> Adam
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .classical import fbp
from .errors import NumericalError, ValidationError
from .grids import AcVector, ImageGrid, LabelMap, Rng, Sinogram
from .inr import (
    FourierEmbedding,
    HeadMode,
    MlpParams,
    NetworkConfig,
    RenderCache,
    backward,
    extract_segmentation,
    forward_render,
    render_with_cache,
)
from .metrics import SSIM_WINDOW, l2_distance, psnr, ssim
from .optimizer import AdamState, adam_step
from .projector import ScanGeometry, get_projector
from .segmentation import (
    DEFAULT_BINS,
    MaskSet,
    masks_from_thresholds,
    multi_otsu,
    order_by_means,
    pixel_accuracy,
    region_means,
)
from .settings import get_settings

logger = logging.getLogger(__name__)

# Residual norms below this give a zero update in l2norm mode.
_MIN_RESIDUAL = 1e-12


class Method(str, Enum):
    INR = "inr"
    AC_IND = "ac-ind"
    AC_IND_PLUS = "ac-ind-plus"


class LossMode(str, Enum):
    L2NORM = "l2norm"
    MSE = "mse"


class InitMethod(str, Enum):
    FBP = "fbp"
    AC_IND = "ac-ind"


# Hyperparameters used for the two dataset families.
PRESETS: Dict[str, Dict[str, float]] = {
    "ellipse": {"lr_mlp": 1e-4, "lr_phi": 1e-4, "temperature": 0.035},
    "walnut": {"lr_mlp": 4e-5, "lr_phi": 1e-5, "temperature": 0.2},
}


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one reconstruction run"""

    geometry: ScanGeometry
    method: Method = Method.AC_IND
    num_materials: int = 6
    temperature: float = 0.035
    lr_mlp: float = 1e-4
    lr_phi: float = 1e-4
    epochs: int = 5000
    seed: int = 0
    loss_mode: LossMode = LossMode.L2NORM
    eval_every: int = 50
    network: NetworkConfig = NetworkConfig()
    inner_epochs: Optional[int] = None
    otsu_bins: int = DEFAULT_BINS

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ValidationError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.lr_mlp < 0 or self.lr_phi < 0:
            raise ValidationError("learning rates must be non-negative")
        if self.inner_epochs is not None and self.inner_epochs < 1:
            raise ValidationError(f"inner_epochs must be >= 1, got {self.inner_epochs}")
        if self.method is not Method.INR:
            if self.num_materials < 1:
                raise ValidationError(f"num_materials must be >= 1, got {self.num_materials}")
            if not 0.0 < self.temperature < 1.0:
                raise ValidationError(f"temperature must lie in (0, 1), got {self.temperature}")
        if self.method is Method.AC_IND_PLUS and self.num_materials < 2:
            raise ValidationError("ac-ind-plus needs at least 2 materials")

    @classmethod
    def from_preset(cls, name: str, geometry: ScanGeometry, **overrides: Any) -> "TrainConfig":
        if name not in PRESETS:
            raise ValidationError(f"unknown preset '{name}', choose from {sorted(PRESETS)}")
        return cls(geometry=geometry, **{**PRESETS[name], **overrides})

    @property
    def uses_distribution(self) -> bool:
        return self.method is not Method.INR

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["method"] = self.method.value
        data["loss_mode"] = self.loss_mode.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        data["geometry"] = ScanGeometry(**data["geometry"])
        data["network"] = NetworkConfig(**data["network"])
        return cls(**data)


@dataclass(frozen=True)
class TraceRecord:
    """Evaluation of the parameters after one update"""

    epoch: int
    loss: float
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    phi: Optional[Tuple[float, ...]] = None
    acv_distance: Optional[float] = None
    seg_accuracy: Optional[float] = None


@dataclass
class TrainTrace:
    """Per-eval-epoch records; the state before training is kept apart in `initial`"""

    records: List[TraceRecord] = field(default_factory=list)
    initial: Optional[TraceRecord] = None

    def append(self, record: TraceRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValidationError(f"trace epochs must increase: {record.epoch} after {self.records[-1].epoch}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def best(self) -> Optional[TraceRecord]:
        """Record with the highest PSNR (earliest on ties)"""
        scored = [r for r in self.records if r.psnr is not None]
        if not scored:
            return None
        return max(scored, key=lambda r: (r.psnr, -r.epoch))


@dataclass(eq=False)
class Checkpoint:
    """Complete training state after the last update"""

    config: TrainConfig
    embedding: FourierEmbedding
    params: MlpParams
    phi: Optional[AcVector]
    adam: AdamState
    step: int

    def render(self) -> ImageGrid:
        geom = self.config.geometry
        image, _ = render_with_cache(self.embedding, self.params, self.phi, geom.height, geom.width)
        return image


@dataclass(frozen=True, eq=False)
class InitResult:
    """Initial AC vector (ascending), its masks, and every stage that produced one"""

    acv: AcVector
    masks: Optional[MaskSet]
    stages: Tuple[Tuple[str, AcVector], ...]


@dataclass(eq=False)
class ReconResult:
    image: ImageGrid
    labels: Optional[LabelMap]
    acv: Optional[AcVector]
    trace: TrainTrace
    checkpoint: Checkpoint
    best_image: Optional[ImageGrid] = None
    init: Optional[InitResult] = None


def projection_loss(image: ImageGrid, sino: Sinogram, geom: ScanGeometry, mode: LossMode) -> Tuple[float, np.ndarray]:
    """Loss value and the residual A x - y"""
    projector = get_projector(geom)
    residual = projector.matrix @ image.data.reshape(-1) - sino.data.reshape(-1)
    if LossMode(mode) is LossMode.MSE:
        return float(residual @ residual) / residual.size, residual
    return float(np.sqrt(residual @ residual)), residual


def loss_gradient(residual: np.ndarray, geom: ScanGeometry, mode: LossMode) -> ImageGrid:
    """dL/dX for the residual returned by projection_loss"""
    projector = get_projector(geom)
    if LossMode(mode) is LossMode.MSE:
        scale = 2.0 / residual.size
    else:
        norm = float(np.sqrt(residual @ residual))
        if norm < _MIN_RESIDUAL:
            return ImageGrid.zeros(geom.height, geom.width)
        scale = 1.0 / norm
    return ImageGrid((scale * (projector.matrix_t @ residual)).reshape(geom.height, geom.width))


def _constant_fit(sino: Sinogram, geom: ScanGeometry) -> AcVector:
    """Least-squares constant image c minimizing ||A c1 - y||"""
    ones = get_projector(geom).matrix @ np.ones(geom.height * geom.width)
    denom = float(ones @ ones)
    return AcVector([float(ones @ sino.data.reshape(-1)) / denom if denom > 0 else 0.0])


def _otsu_means(image: ImageGrid, num_materials: int, num_bins: int) -> Tuple[AcVector, MaskSet]:
    thresholds = multi_otsu(image, num_materials, num_bins)
    masks = masks_from_thresholds(image, thresholds)
    masks, acv = order_by_means(masks, region_means(image, masks))
    return acv, masks


def init_ac_vector(
    sino: Sinogram,
    geom: ScanGeometry,
    num_materials: int,
    init_method: InitMethod = InitMethod.FBP,
    inner_config: Optional[TrainConfig] = None,
    num_bins: int = DEFAULT_BINS,
) -> InitResult:
    """Segment a first reconstruction and take its region means as the AC vector.

    Args:
        sino: measured sinogram
        geom: acquisition geometry
        num_materials: K, at least 2
        init_method: reconstructor producing the image to segment
        inner_config: settings for the inner AC-IND run (init_method = ac-ind)
        num_bins: Multi-Otsu histogram bins
    """
    if num_materials < 2:
        raise ValidationError(f"region-mean initialization needs K >= 2, got {num_materials}")
    init_method = InitMethod(init_method)

    if init_method is InitMethod.FBP:
        acv, masks = _otsu_means(fbp(sino, geom), num_materials, num_bins)
        logger.info("FBP initial AC vector: %s", np.array2string(acv.values, precision=4))
        return InitResult(acv, masks, (("fbp", acv),))

    if inner_config is None:
        inner_config = TrainConfig(geometry=geom, num_materials=num_materials)
    inner_config = replace(inner_config, method=Method.AC_IND, num_materials=num_materials)
    logger.info("Running inner AC-IND for %d epochs", inner_config.epochs)
    inner = train(inner_config, sino)
    acv, masks = _otsu_means(inner.image, num_materials, num_bins)
    logger.info("AC-IND initial AC vector: %s", np.array2string(acv.values, precision=4))
    return InitResult(acv, masks, inner.init.stages + (("ac-ind", acv),))


def _ranks(values: np.ndarray) -> np.ndarray:
    """1-based ascending rank of each value"""
    return np.argsort(np.argsort(values, kind="stable"), kind="stable") + 1


class ACINDTrainer:
    """Joint optimization of the neural field and the AC vector"""

    def __init__(
        self,
        config: TrainConfig,
        sino: Sinogram,
        ground_truth: Optional[ImageGrid] = None,
        true_acv: Optional[AcVector] = None,
        true_labels: Optional[LabelMap] = None,
        init_acv: Optional[AcVector] = None,
    ):
        geom = config.geometry
        if sino.shape != (geom.num_angles, geom.num_detectors):
            raise ValidationError(
                f"sinogram shape {sino.shape} does not match geometry {(geom.num_angles, geom.num_detectors)}"
            )
        if ground_truth is not None and ground_truth.shape != (geom.height, geom.width):
            raise ValidationError(f"ground truth {ground_truth.shape} does not match grid {(geom.height, geom.width)}")
        self.config = config
        self.sino = sino
        self.ground_truth = ground_truth
        # The scalar baseline never looks at material information.
        self.true_acv = true_acv if config.uses_distribution else None
        self.true_labels = true_labels if config.uses_distribution else None
        self.init_acv = init_acv if config.uses_distribution else None
        self.init: Optional[InitResult] = None
        self.trace = TrainTrace()
        self.checkpoint: Optional[Checkpoint] = None
        self.last_finite_loss: Optional[float] = None

    def initialize(self) -> Checkpoint:
        """Fresh embedding, SIREN weights, AC vector and optimizer state"""
        config = self.config
        rng = Rng(config.seed)
        embedding = FourierEmbedding.create(config.network.num_frequencies, rng, config.network.variance)

        if config.uses_distribution:
            widths = config.network.layer_widths(HeadMode.DISTRIBUTION, config.num_materials)
            params = MlpParams.initialize(widths, rng, HeadMode.DISTRIBUTION, config.temperature)
            phi = self._initial_phi()
            adam = AdamState(lr_mlp=config.lr_mlp, lr_phi=config.lr_phi)
        else:
            widths = config.network.layer_widths(HeadMode.SCALAR)
            params = MlpParams.initialize(widths, rng, HeadMode.SCALAR)
            phi = None
            adam = AdamState(lr_mlp=config.lr_mlp)

        self.checkpoint = Checkpoint(config, embedding, params, phi, adam, step=0)
        self.trace = TrainTrace(initial=self.evaluate())
        return self.checkpoint

    def _initial_phi(self) -> AcVector:
        config = self.config
        if self.init_acv is not None:
            if len(self.init_acv) != config.num_materials:
                raise ValidationError(
                    f"initial AC vector has {len(self.init_acv)} values, expected {config.num_materials}"
                )
            self.init = InitResult(self.init_acv, None, (("given", self.init_acv),))
        elif config.num_materials == 1:
            acv = _constant_fit(self.sino, config.geometry)
            self.init = InitResult(acv, None, (("constant", acv),))
        elif config.method is Method.AC_IND_PLUS:
            inner = replace(config, epochs=config.inner_epochs or config.epochs)
            self.init = init_ac_vector(
                self.sino, config.geometry, config.num_materials, InitMethod.AC_IND, inner, config.otsu_bins
            )
        else:
            self.init = init_ac_vector(
                self.sino, config.geometry, config.num_materials, InitMethod.FBP, num_bins=config.otsu_bins
            )
        return self.init.acv

    def _render(self, ckpt: Checkpoint, epoch: int) -> Tuple[ImageGrid, RenderCache]:
        geom = self.config.geometry
        cache = forward_render(ckpt.embedding, ckpt.params, ckpt.phi, geom.height, geom.width)
        if not np.all(np.isfinite(cache.values)):
            raise NumericalError(epoch, self.last_finite_loss)
        return ImageGrid(cache.values.reshape(geom.height, geom.width)), cache

    def _segmentation(self, ckpt: Checkpoint) -> LabelMap:
        geom = self.config.geometry
        return extract_segmentation(ckpt.params, ckpt.embedding, geom.height, geom.width)

    def _seg_accuracy(self, ckpt: Checkpoint) -> float:
        # Materials are matched by AC rank on both sides.
        predicted = self._segmentation(ckpt).relabel(_ranks(ckpt.phi.values))
        truth = self.true_labels
        if self.true_acv is not None and len(self.true_acv) == truth.num_materials:
            truth = truth.relabel(_ranks(self.true_acv.values))
        return pixel_accuracy(predicted, truth)

    def evaluate(self, image: Optional[ImageGrid] = None) -> TraceRecord:
        """Trace record for the current checkpoint"""
        ckpt = self.checkpoint
        config = self.config
        if image is None:
            image, _ = self._render(ckpt, ckpt.step)
        loss, _ = projection_loss(image, self.sino, config.geometry, config.loss_mode)

        record: Dict[str, Any] = {"epoch": ckpt.step, "loss": loss}
        gt = self.ground_truth
        if gt is not None:
            data_range = gt.data_range() or 1.0
            record["psnr"] = psnr(gt, image, data_range)
            if min(gt.shape) >= SSIM_WINDOW:
                record["ssim"] = ssim(gt, image, data_range)
        if ckpt.phi is not None:
            record["phi"] = tuple(float(v) for v in ckpt.phi.values)
            if self.true_acv is not None and len(self.true_acv) == len(ckpt.phi):
                record["acv_distance"] = l2_distance(ckpt.phi.values, self.true_acv.values)
            if self.true_labels is not None and self.true_labels.num_materials == len(ckpt.phi):
                record["seg_accuracy"] = self._seg_accuracy(ckpt)
        return TraceRecord(**record)

    def step(self) -> float:
        """One update; returns the loss of the parameters before it"""
        ckpt = self.checkpoint
        config = self.config
        geom = config.geometry
        epoch = ckpt.step + 1
        image, cache = self._render(ckpt, epoch)
        loss, residual = projection_loss(image, self.sino, geom, config.loss_mode)
        if not math.isfinite(loss):
            raise NumericalError(epoch, self.last_finite_loss)
        self.last_finite_loss = loss

        grads = backward(loss_gradient(residual, geom, config.loss_mode), cache)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericalError(epoch, self.last_finite_loss)
        params, phi, adam = adam_step(ckpt.params, ckpt.phi, grads, ckpt.adam)
        self.checkpoint = Checkpoint(config, ckpt.embedding, params, phi, adam, epoch)
        return loss

    def run(self) -> ReconResult:
        if self.checkpoint is None:
            self.initialize()
        config = self.config
        best_image: Optional[ImageGrid] = None
        best_psnr = -math.inf

        for _ in tqdm(range(config.epochs), desc=config.method.value, disable=not get_settings().progress):
            self.step()
            epoch = self.checkpoint.step
            if epoch % config.eval_every:
                continue
            image, _ = self._render(self.checkpoint, epoch)
            record = self.evaluate(image)
            if not math.isfinite(record.loss):
                raise NumericalError(epoch, self.last_finite_loss)
            self.last_finite_loss = record.loss
            self.trace.append(record)
            logger.debug("epoch %d: %s", epoch, record)
            if record.psnr is not None and record.psnr > best_psnr:
                best_psnr, best_image = record.psnr, image

        ckpt = self.checkpoint
        image, _ = self._render(ckpt, ckpt.step)
        labels = self._segmentation(ckpt) if ckpt.phi is not None else None
        logger.info("%s finished after %d epochs (loss %.6g)", config.method.value, ckpt.step, self.last_finite_loss)
        return ReconResult(image, labels, ckpt.phi, self.trace, ckpt, best_image, self.init)


def train(
    config: TrainConfig,
    sino: Sinogram,
    ground_truth: Optional[ImageGrid] = None,
    true_acv: Optional[AcVector] = None,
    true_labels: Optional[LabelMap] = None,
    init_acv: Optional[AcVector] = None,
) -> ReconResult:
    """Train the configured method on a sinogram"""
    trainer = ACINDTrainer(config, sino, ground_truth, true_acv, true_labels, init_acv)
    return trainer.run()


def _format(value: Optional[float]) -> str:
    return "" if value is None else "%.9g" % value


@dataclass(frozen=True)
class DynamicsReport:
    """CSV-ready rows for the metric series and the AC vector trajectory"""

    rows: List[Dict[str, str]]
    phi_rows: List[Dict[str, str]]


DYNAMICS_COLUMNS = ("epoch", "psnr", "acv_distance", "seg_accuracy")


def dynamics_report(trace: TrainTrace) -> DynamicsReport:
    """Metric and AC-vector rows per logged epoch, numbers at 9 significant digits"""
    if not trace.records:
        raise ValidationError("cannot report on an empty trace")
    rows, phi_rows = [], []
    for record in trace.records:
        rows.append(
            {
                "epoch": str(record.epoch),
                "psnr": _format(record.psnr),
                "acv_distance": _format(record.acv_distance),
                "seg_accuracy": _format(record.seg_accuracy),
            }
        )
        if record.phi is not None:
            phi_row = {"epoch": str(record.epoch)}
            phi_row.update({f"phi{k}": _format(v) for k, v in enumerate(record.phi, start=1)})
            phi_rows.append(phi_row)
    return DynamicsReport(rows, phi_rows)
