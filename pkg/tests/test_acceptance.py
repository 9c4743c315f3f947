"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_LINES`` and printed in the
terminal summary. Run just this file with ``pytest tests/test_acceptance.py``.
"""

import contextlib
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import align_grid
from resalign import bench
from resalign.cli import gradcheck_instance, main
from resalign.encoding import EncodingConfig, decompose_offset, positional_encoding
from resalign.grid_io import encode_flo, encode_pnm, parse_flo, parse_pnm, read_flo, read_pnm
from resalign.implicit_align import AlignModel, align, forward
from resalign.resampling import resample, sample_bicubic, sample_bilinear, sample_nearest
from resalign.spectral import kernel_response, measure_attenuation
from resalign.train import grad_check

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
HIGHFREQ = os.path.join(CONFIGS, "highfreq.ini")


@contextlib.contextmanager
def criterion(number, title, limit=None):
    """Record PASS/FAIL for one criterion; ``limit`` is a runtime cap in seconds."""
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit}s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        ACCEPTANCE_LINES.append(f"[{number:2d}] FAIL {title} ({elapsed:.2f}s): {exc}")
        raise
    info = ", ".join(f"{k}={v}" for k, v in detail.items())
    ACCEPTANCE_LINES.append(f"[{number:2d}] PASS {title} ({elapsed:.2f}s){': ' + info if info else ''}")


def random_model(channels, window, heads, seed):
    model = AlignModel.initialize(channels, window=window, heads=heads, seed=seed)
    rng = np.random.default_rng(seed + 100)
    return model.with_params(
        {n: p + (0.1 * rng.standard_normal(p.shape) if n.startswith("b") else 0.0)
         for n, p in model.params.items()}
    )


def test_01_interpolation_identity():
    with criterion(1, "interpolation identity at lattice points", limit=1.0) as d:
        rng = np.random.default_rng(1)
        checked = 0
        for _ in range(20):
            h, w, c = rng.integers(2, 12, size=3)
            grid = rng.standard_normal((h, w, c)).astype(np.float32)
            ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
            for method in ("nearest", "bilinear", "bicubic"):
                assert np.array_equal(resample(grid, xs, ys, method), grid.astype(np.float64)), method
            x, y = int(rng.integers(w)), int(rng.integers(h))
            for sample in (sample_nearest, sample_bilinear, sample_bicubic):
                assert np.array_equal(sample(grid, (float(x), float(y))), grid[y, x])
            checked += 1
        d["grids"] = checked


def test_02_bilinear_in_band_attenuation():
    with criterion(2, "bilinear attenuation 0.70711, nearest 1.0", limit=1.0) as d:
        bil = measure_attenuation(0.25, 0.5, "bilinear")
        near = measure_attenuation(0.25, 0.5, "nearest")
        d["bilinear"], d["nearest"] = f"{bil:.6f}", f"{near:.8f}"
        assert abs(bil - 0.70711) <= 1e-3
        assert abs(near - 1.0) <= 1e-6


def test_03_kernel_response_identity():
    with criterion(3, "bilinear response is squared nearest response") as d:
        x = np.random.default_rng(3).uniform(0.0, 3.0, size=100)
        err = np.max(np.abs(kernel_response("bilinear", x) - kernel_response("nearest", x) ** 2))
        d["max_err"] = f"{err:.1e}"
        assert err <= 1e-12


def test_04_positional_encoding_norm():
    with criterion(4, "encoding norm squared equals 2D") as d:
        rng = np.random.default_rng(4)
        worst = 0.0
        for bands in (1, 4, 8, 16):
            p = rng.uniform(-10, 10, size=(1000, 2))
            enc = positional_encoding(p, EncodingConfig(bands))
            worst = max(worst, float(np.max(np.abs(np.sum(enc * enc, axis=1) - 2 * bands))))
        d["max_err"] = f"{worst:.1e}"
        assert worst <= 1e-5


def test_05_offset_decomposition():
    with criterion(5, "offset decomposition exact for 1e6 displacements") as d:
        delta = np.random.default_rng(5).uniform(-100, 100, size=10**6).astype(np.float32)
        parts = decompose_offset(delta)
        assert np.all(parts.decimal >= 0.0) and np.all(parts.decimal < 1.0)
        recomposed = parts.integer.astype(np.float64) + parts.decimal
        assert np.array_equal(recomposed, delta.astype(np.float64))
        d["n"] = delta.size


def test_06_attention_normalization_and_envelope():
    with criterion(6, "softmax rows sum to 1, outputs inside value envelope") as d:
        rng = np.random.default_rng(6)
        worst_sum = 0.0
        worst_excess = 0.0
        for k in range(50):
            heads = int(rng.choice([1, 2, 4]))
            window = int(rng.integers(1, 5))
            model = random_model(8, window, heads, seed=k)
            size = int(rng.integers(3, 9))
            cur, ref = rng.standard_normal((2, size, size, 8))
            flow = rng.uniform(-3, 3, size=(size, size, 2)).astype(np.float32)
            cache = forward(cur, ref, flow, model)
            aligned, _ = align(cur, ref, flow, model)
            worst_sum = max(worst_sum, float(np.max(np.abs(cache.attention.sum(axis=-1) - 1.0))))
            # per head, per channel: min_j v_j <= out <= max_j v_j
            n = cache.output.shape[0]
            out = cache.output.reshape(n, heads, -1)
            lo, hi = cache.v.min(axis=1), cache.v.max(axis=1)
            excess = max(float(np.max(lo - out)), float(np.max(out - hi)))
            worst_excess = max(worst_excess, excess)
            np.testing.assert_allclose(aligned.reshape(n, -1), cache.output, atol=1e-5)
        d["max_row_err"] = f"{worst_sum:.1e}"
        d["max_envelope_excess"] = f"{worst_excess:.1e}"
        assert worst_sum <= 1e-6
        # convex combination up to float64 rounding
        assert worst_excess <= 1e-12


def test_07_complexity_accounting():
    with criterion(7, "score_evals = w^2 H W") as d:
        count = 0
        for h in (8, 16, 32):
            for w_ in (8, 16, 32):
                for window in (1, 2, 3, 4):
                    model = AlignModel.initialize(4, window=window, seed=0)
                    zeros = np.zeros((h, w_, 4), np.float32)
                    _, stats = align(zeros, zeros, np.zeros((h, w_, 2), np.float32), model)
                    assert stats.score_evals == window * window * h * w_
                    count += 1
        d["cases"] = count


def test_08_gradient_correctness():
    with criterion(8, "grad_check < 1e-4 at eps 1e-4", limit=30.0) as d:
        errs = []
        for seed in range(5):
            model, instance = gradcheck_instance(seed, channels=8, window=2, heads=2, size=6)
            errs.append(grad_check(model, instance, eps=1e-4))
        d["max_rel_err"] = f"{max(errs):.2e}"
        assert max(errs) < 1e-4


def test_09_brute_force_equivalence():
    with criterion(9, "align matches per-pixel reference to 1e-5") as d:
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(900 + seed)
            model = random_model(8, 2, 2, seed=seed)
            cur, ref = rng.standard_normal((2, 8, 8, 8)).astype(np.float32)
            flow = rng.uniform(-3, 3, size=(8, 8, 2)).astype(np.float32)
            aligned, _ = align(cur, ref, flow, model)
            expected = np.array(align_grid(cur, ref, flow, model.params, 2, 2))
            worst = max(worst, float(np.max(np.abs(aligned - expected))))
        d["max_abs_diff"] = f"{worst:.1e}"
        assert worst <= 1e-5


@pytest.mark.slow
def test_10_directional_study():
    with criterion(10, "implicit PSNR >= bilinear PSNR > 0 dB", limit=300.0) as d:
        config = bench.load_config(HIGHFREQ)
        report = bench.run_study(config)
        imp = report.find("implicit", (0.5, 0.0))
        bil = report.find("bilinear", (0.5, 0.0))
        d["implicit_db"] = f"{imp.psnr_db:.2f}"
        d["bilinear_db"] = f"{bil.psnr_db:.2f}"
        assert imp.train_iterations == 2000
        assert bil.psnr_db > 0.0
        assert imp.psnr_db >= bil.psnr_db


@pytest.mark.slow
def test_11_directional_ablation():
    with criterion(11, "both-PE PSNR >= no-PE PSNR", limit=600.0) as d:
        config = bench.load_config(HIGHFREQ)
        report = bench.run_ablation(config)
        both = report.find("implicit", (0.5, 0.0), "dec1-win1-w2")
        none = report.find("implicit", (0.5, 0.0), "dec0-win0-w2")
        d["both_db"] = f"{both.psnr_db:.2f}"
        d["none_db"] = f"{none.psnr_db:.2f}"
        d["decimal_only_db"] = f"{report.find('implicit', (0.5, 0.0), 'dec1-win0-w2').psnr_db:.2f}"
        assert both.psnr_db >= none.psnr_db


@pytest.mark.slow
def test_12_determinism(tmp_path, capsys):
    with criterion(12, "study reports byte-identical across runs") as d:
        outs = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert main(["study", "--config", HIGHFREQ, "--out", str(out)]) == 0
            outs.append((out / "study.csv").read_bytes())
        capsys.readouterr()
        d["bytes"] = len(outs[0])
        assert outs[0] == outs[1]


def _random_pnm(rng):
    magic = rng.choice([b"P5", b"P6"])
    maxval = int(rng.choice([255, 65535]))
    h, w = (int(v) for v in rng.integers(1, 17, size=2))
    count = h * w * (3 if magic == b"P6" else 1)
    if maxval == 255:
        payload = rng.integers(0, 256, size=count, dtype=np.uint8).tobytes()
    else:
        payload = rng.integers(0, 65536, size=count).astype(">u2").tobytes()
    return magic + f"\n{w} {h}\n{maxval}\n".encode() + payload, maxval


def test_13_format_fidelity(tmp_path):
    with criterion(13, "flo and PNM round-trips bit-exact on 1000 fuzzed files") as d:
        rng = np.random.default_rng(13)
        for k in range(1000):
            h, w = (int(v) for v in rng.integers(1, 17, size=2))
            # arbitrary finite bit patterns: subnormals, -0.0, extreme magnitudes
            flow_bits = rng.integers(0, 2**32, size=(h, w, 2), dtype=np.uint32)
            exponent_all_ones = (flow_bits & 0x7F800000) == 0x7F800000
            flow_bits[exponent_all_ones] ^= 0x00800000
            flo = b"PIEH" + np.array([w, h], "<i4").tobytes() + flow_bits.astype("<u4").tobytes()
            assert encode_flo(parse_flo(flo)) == flo

            pnm, maxval = _random_pnm(rng)
            assert encode_pnm(parse_pnm(pnm), maxval=maxval) == pnm

            if k % 100 == 0:
                # through the filesystem as well
                (tmp_path / "f.flo").write_bytes(flo)
                assert read_flo(tmp_path / "f.flo").view(np.uint32).tobytes() == flow_bits.tobytes()
                (tmp_path / "g.pnm").write_bytes(pnm)
                assert encode_pnm(read_pnm(tmp_path / "g.pnm"), maxval=maxval) == pnm
        d["cases"] = 1000
