"""ACIND Package

Sparse-view parallel-beam CT reconstruction with support for:
- Classical baselines: FBP and SIRT on an exact ray-driven projector
- Segmentation: multi-threshold Otsu and attenuation-coefficient estimation
- Implicit neural representations with a scalar or a distribution head
- Simulation: random ellipse phantoms, scans and detector noise
"""

from .classical import SirtConfig, fbp, sirt
from .errors import AcindError, FileFormatError, NumericalError, SegmentationError, ValidationError
from .grids import AcVector, ImageGrid, LabelMap, Rng, Sinogram
from .inr import FourierEmbedding, HeadMode, MlpParams, NetworkConfig, modulated_softmax, parameter_report
from .metrics import l2_distance, psnr, ssim
from .phantom import MaterialSpec, PhantomPair, ellipse_material_phantom, simulate_scan
from .pipeline import ACINDTrainer, Method, TrainConfig, dynamics_report, init_ac_vector, train
from .projector import ScanGeometry, back_project, forward_project
from .segmentation import multi_otsu, pixel_accuracy

__version__ = "0.1.0"

__all__ = [
    "ACINDTrainer",
    "AcVector",
    "AcindError",
    "FileFormatError",
    "FourierEmbedding",
    "HeadMode",
    "ImageGrid",
    "LabelMap",
    "MaterialSpec",
    "Method",
    "MlpParams",
    "NetworkConfig",
    "NumericalError",
    "PhantomPair",
    "Rng",
    "ScanGeometry",
    "SegmentationError",
    "Sinogram",
    "SirtConfig",
    "TrainConfig",
    "ValidationError",
    "back_project",
    "dynamics_report",
    "ellipse_material_phantom",
    "fbp",
    "forward_project",
    "init_ac_vector",
    "l2_distance",
    "modulated_softmax",
    "multi_otsu",
    "parameter_report",
    "pixel_accuracy",
    "psnr",
    "sirt",
    "simulate_scan",
    "ssim",
    "train",
]
