"""Tests for the grid, checkpoint, CSV and PGM file layouts"""

import struct

import numpy as np
import pandas as pd
import pytest

from acind import file_formats as ff
from acind.errors import FileFormatError
from acind.grids import AcVector, Sinogram
from acind.inr import NetworkConfig
from acind.pipeline import Method, TraceRecord, TrainConfig, TrainTrace, train
from acind.projector import ScanGeometry

TINY = NetworkConfig(num_frequencies=4, hidden_width=8, hidden_layers=2)


def _trained(method: Method):
    geom = ScanGeometry.parallel(12, 12, 6)
    gen = np.random.default_rng(5)
    sino = Sinogram(gen.random((6, geom.num_detectors)))
    config = TrainConfig(geometry=geom, method=method, num_materials=3, temperature=0.2, epochs=3, eval_every=1, network=TINY)
    return train(config, sino)


class TestF32Grid:
    def test_layout(self, rng):
        data = rng.normal(size=(3, 5))
        blob = ff.encode_f32grid(data)
        assert len(blob) == 4 + 2 + 4 + 4 + 3 * 5 * 4
        assert blob[:4] == b"F32G"
        assert struct.unpack_from("<HII", blob, 4) == (1, 3, 5)

    def test_values_are_f32_rounded(self, tmp_path, rng):
        data = rng.normal(size=(4, 6))
        path = tmp_path / "grid.f32g"
        ff.write_f32grid(path, data)
        assert np.array_equal(ff.read_f32grid(path), data.astype(np.float32).astype(np.float64))

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda blob: b"XXXX" + blob[4:],
            lambda blob: blob[:4] + struct.pack("<H", 2) + blob[6:],
            lambda blob: blob[:-1],
            lambda blob: blob + b"\0",
            lambda blob: blob[:7],
        ],
    )
    def test_rejects_malformed(self, mutate):
        with pytest.raises(FileFormatError):
            ff.decode_f32grid(mutate(ff.encode_f32grid(np.zeros((2, 2)))))


class TestCheckpoint:
    @pytest.mark.parametrize("method", [Method.AC_IND, Method.INR])
    def test_bitwise_round_trip(self, method):
        ckpt = _trained(method).checkpoint
        blob = ff.encode_checkpoint(ckpt)
        decoded = ff.decode_checkpoint(blob)
        assert ff.encode_checkpoint(decoded) == blob
        assert decoded.step == 3 and decoded.config == ckpt.config
        assert decoded.render() == ckpt.render()

    def test_preserves_optimizer_state(self, tmp_path):
        ckpt = _trained(Method.AC_IND).checkpoint
        path = tmp_path / "ckpt.bin"
        ff.save_checkpoint(path, ckpt)
        loaded = ff.load_checkpoint(path)
        assert loaded.adam.step == ckpt.adam.step
        assert set(loaded.adam.first_moments) == set(ckpt.adam.first_moments)
        for name, moment in ckpt.adam.second_moments.items():
            assert np.array_equal(loaded.adam.second_moments[name], moment)
        assert loaded.phi == ckpt.phi

    def test_rejects_corruption(self):
        blob = ff.encode_checkpoint(_trained(Method.AC_IND).checkpoint)
        for broken in (b"NOPE" + blob[4:], blob[:-3], blob + b"\0\0"):
            with pytest.raises(FileFormatError):
                ff.decode_checkpoint(broken)


class TestCsvTables:
    def test_geometry_sidecar(self, tmp_path):
        geom = ScanGeometry(32, 30, 20, 45, 0.5)
        sidecar = ff.geometry_sidecar(tmp_path / "scan.f32g")
        assert sidecar.name == "scan.geom.csv"
        ff.write_geometry(sidecar, geom)
        assert ff.read_geometry(sidecar) == geom

    def test_unknown_angle_rule(self, tmp_path):
        path = tmp_path / "bad.geom.csv"
        ff.write_geometry(path, ScanGeometry(4, 4, 2, 6))
        path.write_text(path.read_text().replace("equiangular[0,pi)", "golden"))
        with pytest.raises(FileFormatError):
            ff.read_geometry(path)

    def test_acv(self, tmp_path):
        path = tmp_path / "truth.acv.csv"
        ff.write_acv(path, AcVector([0.0, 0.5, 1.3]))
        assert ff.read_acv(path) == AcVector([0.0, 0.5, 1.3])

    def test_acv_stages(self, tmp_path):
        path = tmp_path / "init.acv.csv"
        ff.write_acv_stages(path, [("fbp", AcVector([0.0, 1.1])), ("ac-ind", AcVector([0.0, 1.0]))])
        frame = pd.read_csv(path)
        assert frame["stage"].tolist() == ["fbp", "ac-ind"]
        assert frame["a2"].tolist() == [1.1, 1.0]

    def test_trace_round_trip(self, tmp_path):
        trace = TrainTrace(
            [
                TraceRecord(epoch=50, loss=1.25, psnr=20.5, ssim=0.75, phi=(0.0, 1.5), acv_distance=0.25, seg_accuracy=0.5),
                TraceRecord(epoch=100, loss=0.5, psnr=22.0, ssim=0.8, phi=(0.0, 1.25), acv_distance=0.125),
            ]
        )
        path = tmp_path / "trace.csv"
        ff.write_trace(path, trace)
        loaded = ff.read_trace(path)
        assert loaded.records == trace.records

    def test_scalar_trace_round_trip(self, tmp_path):
        trace = TrainTrace([TraceRecord(epoch=1, loss=3.0), TraceRecord(epoch=2, loss=2.0, psnr=12.5)])
        path = tmp_path / "trace.csv"
        ff.write_trace(path, trace)
        assert ff.read_trace(path).records == trace.records

    def test_metrics_infinite_psnr_literal(self, tmp_path):
        path = tmp_path / "metrics.csv"
        ff.write_metrics(path, [{"method": "fbp", "views": 20, "psnr": float("inf"), "ssim": 1.0, "data_range": 2.5}])
        assert "inf" in path.read_text().splitlines()[1]
        assert ff.read_metrics(path)["psnr"].iloc[0] == float("inf")

    def test_metrics_append(self, tmp_path):
        path = tmp_path / "metrics.csv"
        row = {"method": "sirt", "views": 40, "psnr": 21.0, "ssim": 0.6, "data_range": 1.0}
        ff.write_metrics(path, [row])
        ff.write_metrics(path, [row], append=True)
        assert len(ff.read_metrics(path)) == 2
        assert path.read_text().count("method") == 1

    def test_summary_uses_population_std(self):
        frames = [
            pd.DataFrame([{"method": "ac-ind", "views": 20, "psnr": p, "ssim": 0.5, "data_range": 1.0}])
            for p in (30.0, 32.0)
        ]
        summary = ff.summarize_metrics(frames)
        row = summary.iloc[0]
        assert (row["psnr_mean"], row["psnr_std"], row["ssim_std"], row["samples"]) == (31.0, 1.0, 0.0, 2)


class TestPgm:
    def test_binary_image_extremes(self, tmp_path):
        image = np.array([[0.0, 1.0], [1.0, 0.0]])
        path = tmp_path / "panel.pgm"
        ff.write_pgm(path, image)
        assert path.read_bytes().startswith(b"P5\n2 2\n65535\n")
        assert ff.read_pgm(path).tolist() == [[0, 65535], [65535, 0]]
        bounds = pd.read_csv(ff.range_sidecar(path)).iloc[0]
        assert (bounds["min"], bounds["max"]) == (0.0, 1.0)

    def test_constant_image(self):
        blob, lo, hi = ff.encode_pgm(np.full((2, 3), 4.0))
        assert lo == hi == 4.0
        assert blob.endswith(b"\0" * 12)
