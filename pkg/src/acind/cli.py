"""Command Line - handles the acind subcommands and their exit codes

Exit codes: 0 success, 1 I/O or file format, 2 usage or validation, 3 numeric failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import file_formats as ff
from .classical import SirtConfig, fbp, sirt
from .errors import AcindError, ValidationError
from .grids import ImageGrid, LabelMap, Sinogram
from .inr import NetworkConfig, parameter_report
from .metrics import psnr, ssim
from .phantom import (
    DEFAULT_ELLIPSES,
    MaterialSpec,
    add_detector_noise,
    barbapapa_like_phantom,
    ellipse_material_phantom,
)
from .pipeline import DYNAMICS_COLUMNS, PRESETS, LossMode, Method, TrainConfig, dynamics_report, train
from .projector import ScanGeometry, forward_project
from .settings import get_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1


def _phantom_paths(prefix: str):
    return Path(f"{prefix}.img.f32g"), Path(f"{prefix}.labels.f32g"), Path(f"{prefix}.acv.csv")


def cmd_phantom(args: argparse.Namespace) -> int:
    """Write <prefix>.img.f32g, <prefix>.labels.f32g and <prefix>.acv.csv"""
    if args.size < 1:
        raise ValidationError(f"--size must be positive, got {args.size}")
    if args.kind == "barbapapa":
        values = tuple(args.values) if args.values else (0.0, 1.0, 2.0)
        pair = barbapapa_like_phantom(args.size, args.size, values)
    else:
        spec = MaterialSpec(tuple(args.values)) if args.values else MaterialSpec.default(args.materials)
        if args.values and len(spec.values) != args.materials:
            raise ValidationError(f"--values lists {len(spec.values)} materials, --materials says {args.materials}")
        pair = ellipse_material_phantom(args.seed, args.size, args.size, spec, args.ellipses, blend=args.blend)

    img_path, labels_path, acv_path = _phantom_paths(args.out_prefix)
    ff.write_f32grid(img_path, pair.image.data)
    ff.write_f32grid(labels_path, pair.labels.labels.astype(np.float64))
    ff.write_acv(acv_path, pair.acv)
    print(f"Wrote {img_path}, {labels_path}, {acv_path}")
    return EXIT_OK


def cmd_scan(args: argparse.Namespace) -> int:
    """Forward-project an image file into a sinogram plus its geometry sidecar"""
    if args.views < 1:
        raise ValidationError(f"--views must be >= 1, got {args.views}")
    image = ImageGrid(ff.read_f32grid(args.image))
    geom = ScanGeometry.parallel(image.height, image.width, args.views, args.detectors, args.spacing)
    sino = add_detector_noise(forward_project(image, geom), args.noise_sigma, args.seed)
    ff.write_f32grid(args.out, sino.data)
    sidecar = ff.geometry_sidecar(args.out)
    ff.write_geometry(sidecar, geom)
    print(f"Wrote {args.out} ({geom.num_angles} x {geom.num_detectors}) and {sidecar}")
    return EXIT_OK


def _load_ground_truth(prefix: str):
    img_path, labels_path, acv_path = _phantom_paths(prefix)
    if not img_path.exists():
        raise ValidationError(f"ground truth image {img_path} does not exist")
    image = ImageGrid(ff.read_f32grid(img_path))
    acv = ff.read_acv(acv_path) if acv_path.exists() else None
    labels = None
    if labels_path.exists() and acv is not None:
        labels = LabelMap(np.rint(ff.read_f32grid(labels_path)).astype(np.int64), len(acv))
    return image, labels, acv


def _train_config(args: argparse.Namespace, geom: ScanGeometry) -> TrainConfig:
    options = dict(
        method=Method(args.method),
        num_materials=args.materials,
        epochs=args.epochs,
        seed=args.seed,
        loss_mode=LossMode(args.loss),
        eval_every=args.eval_every,
        inner_epochs=args.inner_epochs,
        network=NetworkConfig(args.frequencies, args.width, args.layers),
    )
    for flag, key in (("temp", "temperature"), ("lr_mlp", "lr_mlp"), ("lr_phi", "lr_phi")):
        value = getattr(args, flag)
        if value is not None:
            options[key] = value
    if args.preset:
        return TrainConfig.from_preset(args.preset, geom, **options)
    return TrainConfig(geometry=geom, **options)


def cmd_recon(args: argparse.Namespace) -> int:
    """Reconstruct a sinogram with one of the five methods"""
    geom = ff.read_geometry(args.geom or ff.geometry_sidecar(args.sino))
    sino = Sinogram(ff.read_f32grid(args.sino))
    gt_image, gt_labels, gt_acv = _load_ground_truth(args.eval_gt) if args.eval_gt else (None, None, None)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.method == "fbp":
        image = fbp(sino, geom)
    elif args.method == "sirt":
        image = sirt(sino, geom, SirtConfig(num_iters=args.iters))
    else:
        config = _train_config(args, geom)
        result = train(config, sino, gt_image, gt_acv, gt_labels)
        image = result.image
        ff.write_trace(out_dir / "trace.csv", result.trace)
        ff.save_checkpoint(out_dir / "ckpt.bin", result.checkpoint)
        if result.labels is not None:
            ff.write_f32grid(out_dir / "seg.f32g", result.labels.labels.astype(np.float64))
        if result.init is not None:
            ff.write_acv_stages(out_dir / "init.acv.csv", result.init.stages)
        if result.best_image is not None:
            ff.write_f32grid(out_dir / "best.f32g", result.best_image.data)
            best = result.trace.best()
            print(f"Best PSNR {best.psnr:.3f} dB at epoch {best.epoch}")

    ff.write_f32grid(out_dir / "recon.f32g", image.data)
    if gt_image is not None:
        data_range = gt_image.data_range() or 1.0
        print(f"{args.method}: PSNR {psnr(gt_image, image, data_range):.3f} dB")
    print(f"Wrote {out_dir / 'recon.f32g'}")
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    """Append method, views, psnr, ssim, data_range for one reconstruction"""
    recon = ImageGrid(ff.read_f32grid(args.recon))
    gt = ImageGrid(ff.read_f32grid(args.gt))
    data_range = args.data_range if args.data_range is not None else (gt.data_range() or 1.0)
    row = {
        "method": args.method,
        "views": args.views,
        "psnr": psnr(gt, recon, data_range),
        "ssim": ssim(gt, recon, data_range),
        "data_range": data_range,
    }
    ff.write_metrics(args.out, [row], append=args.append)
    if args.pgm:
        ff.write_pgm(args.pgm, recon.data)
    print(f"{args.method} @ {args.views} views: PSNR {row['psnr']:.3f} dB, SSIM {row['ssim']:.4f}")
    return EXIT_OK


def cmd_dynamics(args: argparse.Namespace) -> int:
    """Turn a trace into epoch, psnr, acv_distance, seg_accuracy rows"""
    report = dynamics_report(ff.read_trace(args.trace))
    ff.write_rows(args.out, report.rows, DYNAMICS_COLUMNS)
    if args.phi_out and report.phi_rows:
        ff.write_rows(args.phi_out, report.phi_rows)
    print(f"Wrote {len(report.rows)} rows to {args.out}")
    return EXIT_OK


def cmd_params_report(args: argparse.Namespace) -> int:
    """Print trainable parameter totals for both heads"""
    config = NetworkConfig(args.frequencies, args.width, args.layers)
    print(f"{'head':<8}{'network':>12}{'ac values':>12}{'total':>12}{'reference':>12}")
    for row in parameter_report(args.materials, config):
        print(f"{row.label:<8}{row.network:>12,}{row.ac_values:>12,}{row.total:>12,}{row.reference:>12,}")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    """Mean and standard deviation of metrics CSVs per (method, views)"""
    summary = ff.summarize_metrics([ff.read_metrics(path) for path in args.inputs])
    if args.out:
        summary.to_csv(args.out, index=False, float_format=ff.FLOAT_FORMAT)
    for row in summary.itertuples(index=False):
        print(
            f"{row.method:<12} {row.views:>4} views: PSNR {row.psnr_mean:.2f} ± {row.psnr_std:.2f}, "
            f"SSIM {row.ssim_mean:.4f} ± {row.ssim_std:.4f} (n={row.samples})"
        )
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    """Export an F32G grid as a 16-bit PGM"""
    ff.write_pgm(args.out, ff.read_f32grid(args.input))
    print(f"Wrote {args.out} and {ff.range_sidecar(args.out)}")
    return EXIT_OK


def _add_network_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--frequencies", type=int, default=128, help="Fourier frequencies m")
    parser.add_argument("--width", type=int, default=256, help="Hidden layer width")
    parser.add_argument("--layers", type=int, default=4, help="Sine hidden layers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acind", description="Sparse-view CT with AC-IND")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="Generate a synthetic phantom")
    p.add_argument("--kind", choices=["ellipse", "barbapapa"], default="ellipse")
    p.add_argument("--size", type=int, default=64, help="Grid size (square)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--materials", type=int, default=6, help="K, air included")
    p.add_argument("--ellipses", type=int, default=DEFAULT_ELLIPSES)
    p.add_argument("--values", type=float, nargs="+", help="AC value per material, air first")
    p.add_argument("--blend", action="store_true", help="Area-weighted boundary blending")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("scan", help="Simulate a parallel-beam scan")
    p.add_argument("--image", required=True)
    p.add_argument("--views", type=int, required=True)
    p.add_argument("--detectors", type=int, default=None, help="Default covers the image diagonal")
    p.add_argument("--spacing", type=float, default=1.0, help="Detector spacing in pixels")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_scan)

    p = sub.add_parser("recon", help="Reconstruct a sinogram")
    p.add_argument("--sino", required=True)
    p.add_argument("--geom", default=None, help="Geometry CSV (default: sinogram sidecar)")
    p.add_argument("--method", choices=["fbp", "sirt"] + [m.value for m in Method], required=True)
    p.add_argument("--materials", type=int, default=6)
    p.add_argument("--temp", type=float, default=None)
    p.add_argument("--lr-mlp", type=float, default=None)
    p.add_argument("--lr-phi", type=float, default=None)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--epochs", type=int, default=5000)
    p.add_argument("--inner-epochs", type=int, default=None, help="Inner AC-IND epochs for ac-ind-plus")
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--loss", choices=[m.value for m in LossMode], default=LossMode.L2NORM.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=2000, help="SIRT iterations")
    p.add_argument("--eval-gt", default=None, help="Phantom prefix used as ground truth")
    p.add_argument("--out-dir", default=".")
    _add_network_flags(p)
    p.set_defaults(handler=cmd_recon)

    p = sub.add_parser("metrics", help="Score a reconstruction against ground truth")
    p.add_argument("--recon", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--views", type=int, required=True)
    p.add_argument("--data-range", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--append", action="store_true")
    p.add_argument("--pgm", default=None, help="Also export the reconstruction as PGM")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("dynamics", help="Extract training dynamics from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phi-out", default=None, help="AC vector trajectory CSV")
    p.set_defaults(handler=cmd_dynamics)

    p = sub.add_parser("params-report", help="Trainable parameter totals")
    p.add_argument("--materials", type=int, default=6)
    _add_network_flags(p)
    p.set_defaults(handler=cmd_params_report)

    p = sub.add_parser("summarize", help="Mean ± std of metrics CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_summarize)

    p = sub.add_parser("export", help="Export a grid as 16-bit PGM")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = get_settings()
        logging.basicConfig(
            level=getattr(logging, settings.log_level, logging.WARNING),
            format="%(asctime)s - %(levelname)s - %(message)s",
        )
        return args.handler(args)
    except AcindError as exc:
        print(f"acind {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"acind {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
