"""File Formats - handles grid, checkpoint, CSV and PGM files

Binary layouts (all little-endian unless noted):

    F32G grid:   "F32G" | version u16 | H u32 | W u32 | H*W float32, row-major
    Checkpoint:  "ACIN" | version u16 | T f64 | step u64 | seed u64
                 | config JSON length u32 | config JSON (utf-8, sorted keys)
                 | lr_mlp f64 | lr_phi f64 | beta1 f64 | beta2 f64 | eps f64
                 | array count u32
                 | per array: name length u16 | name | ndim u8 | dims u32... | float64 data
    PGM:         binary P5, maxval 65535, big-endian samples
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import FileFormatError, ValidationError
from .grids import AcVector
from .inr import PHI, FourierEmbedding, HeadMode, MlpParams
from .optimizer import AdamState
from .pipeline import Checkpoint, TraceRecord, TrainConfig, TrainTrace
from .projector import ScanGeometry

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

GRID_MAGIC = b"F32G"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4sHII")

CHECKPOINT_MAGIC = b"ACIN"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHdQQ")
_ADAM_HEADER = struct.Struct("<5d")

ANGLE_RULE = "equiangular[0,pi)"
FLOAT_FORMAT = "%.9g"
PGM_MAXVAL = 65535

TRACE_COLUMNS = ["epoch", "loss", "psnr", "ssim", "acv_distance", "seg_accuracy"]
METRICS_COLUMNS = ["method", "views", "psnr", "ssim", "data_range"]


# F32G grids

def encode_f32grid(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValidationError(f"grid must be 2-D, got shape {array.shape}")
    height, width = array.shape
    return _GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, height, width) + array.astype("<f4").tobytes()


def decode_f32grid(blob: bytes) -> np.ndarray:
    if len(blob) < _GRID_HEADER.size:
        raise FileFormatError(f"grid file too short ({len(blob)} bytes)")
    magic, version, height, width = _GRID_HEADER.unpack_from(blob)
    if magic != GRID_MAGIC:
        raise FileFormatError(f"bad grid magic {magic!r}")
    if version != GRID_VERSION:
        raise FileFormatError(f"unsupported grid version {version}")
    expected = _GRID_HEADER.size + 4 * height * width
    if len(blob) != expected:
        raise FileFormatError(f"grid payload is {len(blob)} bytes, header declares {expected}")
    return np.frombuffer(blob, dtype="<f4", offset=_GRID_HEADER.size).reshape(height, width).astype(np.float64)


def write_f32grid(path: PathLike, array: np.ndarray):
    Path(path).write_bytes(encode_f32grid(array))
    logger.debug("Wrote grid %s with shape %s", path, np.shape(array))


def read_f32grid(path: PathLike) -> np.ndarray:
    return decode_f32grid(Path(path).read_bytes())


# Checkpoints

class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, fmt: Union[str, struct.Struct]):
        layout = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        if self.offset + layout.size > len(self.blob):
            raise FileFormatError("checkpoint is truncated")
        values = layout.unpack_from(self.blob, self.offset)
        self.offset += layout.size
        return values

    def take_bytes(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise FileFormatError("checkpoint is truncated")
        data = self.blob[self.offset : self.offset + count]
        self.offset += count
        return data


def _checkpoint_arrays(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    arrays = [("E", ckpt.embedding.matrix)]
    arrays.extend(ckpt.params.named_arrays().items())
    if ckpt.phi is not None:
        arrays.append((PHI, ckpt.phi.values))
    names = [name for name, _ in arrays[1:]]
    arrays.extend((f"adam_m/{n}", ckpt.adam.first_moments[n]) for n in names if n in ckpt.adam.first_moments)
    arrays.extend((f"adam_v/{n}", ckpt.adam.second_moments[n]) for n in names if n in ckpt.adam.second_moments)
    return arrays


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    config = ckpt.config
    temperature = ckpt.params.temperature if ckpt.params.head_mode is HeadMode.DISTRIBUTION else 0.0
    config_json = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    adam = ckpt.adam
    parts = [
        _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, temperature, ckpt.step, config.seed),
        struct.pack("<I", len(config_json)),
        config_json,
        _ADAM_HEADER.pack(adam.lr_mlp, adam.lr_phi, adam.beta1, adam.beta2, adam.eps),
    ]
    arrays = _checkpoint_arrays(ckpt)
    parts.append(struct.pack("<I", len(arrays)))
    for name, array in arrays:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    reader = _Reader(blob)
    magic, version, temperature, step, seed = reader.take(_CKPT_HEADER)
    if magic != CHECKPOINT_MAGIC:
        raise FileFormatError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FileFormatError(f"unsupported checkpoint version {version}")
    (config_length,) = reader.take("<I")
    try:
        config = TrainConfig.from_dict(json.loads(reader.take_bytes(config_length).decode("utf-8")))
    except (ValueError, TypeError, KeyError) as exc:
        raise FileFormatError(f"checkpoint config is unreadable: {exc}") from exc
    if config.seed != seed:
        raise FileFormatError(f"checkpoint seed {seed} disagrees with its config ({config.seed})")
    lr_mlp, lr_phi, beta1, beta2, eps = reader.take(_ADAM_HEADER)

    arrays: Dict[str, np.ndarray] = {}
    (count,) = reader.take("<I")
    for _ in range(count):
        (name_length,) = reader.take("<H")
        name = reader.take_bytes(name_length).decode("utf-8")
        (ndim,) = reader.take("<B")
        shape = reader.take(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(reader.take_bytes(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(blob):
        raise FileFormatError(f"{len(blob) - reader.offset} trailing bytes after checkpoint arrays")

    head = HeadMode.DISTRIBUTION if config.uses_distribution else HeadMode.SCALAR
    layer_count = sum(1 for name in arrays if name.startswith("W"))
    try:
        params = MlpParams(
            [arrays[f"W{i}"] for i in range(1, layer_count + 1)],
            [arrays[f"b{i}"] for i in range(1, layer_count + 1)],
            head,
            temperature if head is HeadMode.DISTRIBUTION else None,
        )
        embedding = FourierEmbedding(arrays["E"], config.network.variance)
    except KeyError as exc:
        raise FileFormatError(f"checkpoint lacks array {exc}") from exc
    phi = AcVector(arrays[PHI]) if PHI in arrays else None
    adam = AdamState(
        lr_mlp=lr_mlp,
        lr_phi=lr_phi,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        step=step,
        first_moments={k[len("adam_m/"):]: v for k, v in arrays.items() if k.startswith("adam_m/")},
        second_moments={k[len("adam_v/"):]: v for k, v in arrays.items() if k.startswith("adam_v/")},
    )
    return Checkpoint(config, embedding, params, phi, adam, step)


def save_checkpoint(path: PathLike, ckpt: Checkpoint):
    Path(path).write_bytes(encode_checkpoint(ckpt))
    logger.info("Saved checkpoint at step %d to %s", ckpt.step, path)


def load_checkpoint(path: PathLike) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# CSV tables

def geometry_sidecar(path: PathLike) -> Path:
    return Path(path).with_suffix(".geom.csv")


def write_geometry(path: PathLike, geom: ScanGeometry):
    frame = pd.DataFrame(
        [
            {
                "height": geom.height,
                "width": geom.width,
                "num_angles": geom.num_angles,
                "num_detectors": geom.num_detectors,
                "detector_spacing": geom.detector_spacing,
                "angle_rule": ANGLE_RULE,
            }
        ]
    )
    frame.to_csv(path, index=False)


def read_geometry(path: PathLike) -> ScanGeometry:
    try:
        row = pd.read_csv(path).iloc[0]
        if row["angle_rule"] != ANGLE_RULE:
            raise FileFormatError(f"unsupported angle rule {row['angle_rule']!r}")
        return ScanGeometry(
            int(row["height"]),
            int(row["width"]),
            int(row["num_angles"]),
            int(row["num_detectors"]),
            float(row["detector_spacing"]),
        )
    except (KeyError, IndexError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FileFormatError(f"bad geometry sidecar {path}: {exc}") from exc


def write_acv(path: PathLike, acv: AcVector):
    pd.DataFrame({"material": np.arange(1, len(acv) + 1), "value": acv.values}).to_csv(path, index=False)


def read_acv(path: PathLike) -> AcVector:
    try:
        frame = pd.read_csv(path)
        return AcVector(frame.sort_values("material")["value"].to_numpy(dtype=np.float64))
    except (KeyError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FileFormatError(f"bad AC vector file {path}: {exc}") from exc


def write_acv_stages(path: PathLike, stages: Sequence[Tuple[str, AcVector]]):
    """One row per initialization stage: stage, a1..aK"""
    rows = []
    for stage, acv in stages:
        row = {"stage": stage}
        row.update({f"a{k}": v for k, v in enumerate(acv.values, start=1)})
        rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False)


def write_trace(path: PathLike, trace: TrainTrace):
    rows = []
    for record in trace.records:
        row = {column: getattr(record, column) for column in TRACE_COLUMNS}
        if record.phi is not None:
            row.update({f"phi{k}": v for k, v in enumerate(record.phi, start=1)})
        rows.append(row)
    frame = pd.DataFrame(rows, columns=None if rows else TRACE_COLUMNS)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _optional(value) -> Optional[float]:
    return None if pd.isna(value) else float(value)


def read_trace(path: PathLike) -> TrainTrace:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FileFormatError(f"bad trace file {path}: {exc}") from exc
    missing = set(TRACE_COLUMNS) - set(frame.columns)
    if missing:
        raise FileFormatError(f"trace file {path} lacks columns {sorted(missing)}")
    phi_columns = sorted((c for c in frame.columns if c.startswith("phi")), key=lambda c: int(c[3:]))
    trace = TrainTrace()
    for _, row in frame.iterrows():
        phi = tuple(float(row[c]) for c in phi_columns) if phi_columns and not row[phi_columns].isna().any() else None
        trace.append(
            TraceRecord(
                epoch=int(row["epoch"]),
                loss=float(row["loss"]),
                psnr=_optional(row["psnr"]),
                ssim=_optional(row["ssim"]),
                phi=phi,
                acv_distance=_optional(row["acv_distance"]),
                seg_accuracy=_optional(row["seg_accuracy"]),
            )
        )
    return trace


def write_rows(path: PathLike, rows: List[Dict[str, str]], columns: Optional[Sequence[str]] = None):
    """Pre-formatted string rows (see pipeline.dynamics_report)"""
    pd.DataFrame(rows, columns=list(columns) if columns else None).to_csv(path, index=False)


def write_metrics(path: PathLike, rows: List[Dict[str, object]], append: bool = False):
    path = Path(path)
    frame = pd.DataFrame(rows, columns=METRICS_COLUMNS)
    header = not (append and path.exists())
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, mode="a" if append else "w", header=header)


def read_metrics(path: PathLike) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FileFormatError(f"bad metrics file {path}: {exc}") from exc
    missing = set(METRICS_COLUMNS) - set(frame.columns)
    if missing:
        raise FileFormatError(f"metrics file {path} lacks columns {sorted(missing)}")
    return frame


def summarize_metrics(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Mean and population standard deviation of psnr/ssim per (method, views)"""
    frame = pd.concat(frames, ignore_index=True)
    grouped = frame.groupby(["method", "views"], sort=True)
    summary = grouped[["psnr", "ssim"]].agg(["mean", lambda s: s.std(ddof=0)])
    summary.columns = ["psnr_mean", "psnr_std", "ssim_mean", "ssim_std"]
    summary["samples"] = grouped.size()
    return summary.reset_index()


# PGM export

def range_sidecar(path: PathLike) -> Path:
    return Path(path).with_suffix(".range.csv")


def encode_pgm(array: np.ndarray) -> Tuple[bytes, float, float]:
    """16-bit P5 image min-max normalized to [0, 65535], plus the (min, max) used"""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 2:
        raise ValidationError(f"PGM export needs a 2-D grid, got shape {array.shape}")
    lo, hi = float(array.min()), float(array.max())
    scaled = (array - lo) / (hi - lo) if hi > lo else np.zeros_like(array)
    samples = np.round(scaled * PGM_MAXVAL).astype(">u2")
    height, width = array.shape
    return f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii") + samples.tobytes(), lo, hi


def write_pgm(path: PathLike, array: np.ndarray):
    blob, lo, hi = encode_pgm(array)
    Path(path).write_bytes(blob)
    pd.DataFrame([{"min": lo, "max": hi}]).to_csv(range_sidecar(path), index=False)


def read_pgm(path: PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens, offset = [], 0
    while len(tokens) < 4:
        while offset < len(blob) and blob[offset : offset + 1].isspace():
            offset += 1
        start = offset
        while offset < len(blob) and not blob[offset : offset + 1].isspace():
            offset += 1
        if start == offset:
            raise FileFormatError(f"PGM header of {path} is truncated")
        tokens.append(blob[start:offset])
    offset += 1
    if tokens[0] != b"P5" or int(tokens[3]) != PGM_MAXVAL:
        raise FileFormatError(f"{path} is not a 16-bit binary PGM")
    width, height = int(tokens[1]), int(tokens[2])
    if len(blob) - offset != 2 * width * height:
        raise FileFormatError(f"PGM payload of {path} has the wrong size")
    return np.frombuffer(blob, dtype=">u2", offset=offset).reshape(height, width)
