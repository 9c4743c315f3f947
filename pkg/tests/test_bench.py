import csv
import io
import math

import numpy as np
import pytest

from resalign import bench
from resalign.cli import main
from resalign.grid_io import read_flo, read_pnm, write_flo, write_pnm
from resalign.implicit_align import load_model
from resalign.resampling import backward_warp

SMALL = """
[study]
height = 12
width = 12
shifts = 0.0; 0.5; 0.25 0.5
methods = nearest, bilinear, bicubic, implicit

[implicit]
window = 2
heads = 1
iterations = 30
lr = 0.01
seed = 0
train_shifts = 0.5
train_crops = 2

[ablation]
windows = 1, 2

[checks]
implicit_ge_bilinear = false

[scene]
channels = 4
offset = 0.5
seed = 0
component1 = 0.4 0.25 0.0 random
"""


@pytest.fixture(scope="module")
def config():
    return bench.parse_config(SMALL)


@pytest.fixture(scope="module")
def study(config):
    return bench.run_study(config)


def test_parse_config(config):
    assert (config.height, config.width, config.channels) == (12, 12, 4)
    assert config.shifts == [(0.0, 0.0), (0.5, 0.0), (0.25, 0.5)]
    assert config.implicit.iterations == 30 and config.implicit.train_shifts == ((0.5, 0.0),)
    assert config.ablation_windows == (1, 2)
    assert config.checks == {"implicit_ge_bilinear": False}


def test_parse_shifts():
    assert bench.parse_shifts("1; 0.5 -0.25;") == [(1.0, 0.0), (0.5, -0.25)]
    with pytest.raises(ValueError):
        bench.parse_shifts("1 2 3")


@pytest.mark.parametrize(
    "edit, match",
    [
        (("methods = nearest, bilinear, bicubic, implicit", "methods = "), "empty"),
        (("methods = nearest,", "methods = lanczos,"), "unknown"),
        (("channels = 4", "channels = 6"), "divisible"),
        (("[study]", "[stud]"), "study"),
    ],
)
def test_invalid_configs(edit, match):
    with pytest.raises(ValueError, match=match):
        bench.parse_config(SMALL.replace(*edit))


def test_scene_path_is_relative_to_config(tmp_path):
    (tmp_path / "scene.ini").write_text("[scene]\nchannels = 4\ncomponent1 = 1 0.1 0 0\n")
    text = SMALL.split("[scene]")[0].replace("[study]", "[study]\nscene = scene.ini")
    path = tmp_path / "study.ini"
    path.write_text(text)
    assert bench.load_config(path).scene.components[0][0].freq_x == 0.1


def test_one_row_per_method_and_shift(config, study):
    keys = [(r.method, r.shift) for r in study.rows]
    assert len(keys) == len(set(keys)) == 12
    assert [r.method for r in study.rows[:4]] == ["nearest", "bilinear", "bicubic", "implicit"]


def test_zero_shift_classical_rows_are_exact(study):
    for method in ("nearest", "bilinear", "bicubic"):
        row = study.find(method, (0.0, 0.0))
        assert row.psnr_db == math.inf
        assert row.ssim == pytest.approx(1.0)


def test_bilinear_attenuation_row(study):
    assert study.find("bilinear", (0.5, 0.0)).attenuation == pytest.approx(0.70711, abs=1e-3)
    assert study.find("nearest", (0.5, 0.0)).attenuation == pytest.approx(1.0, abs=1e-6)


def test_score_evals_accounting(config, study):
    for row in study.rows:
        expected = 4 * 12 * 12 if row.method == "implicit" else 0
        assert row.score_evals == expected
        assert row.train_iterations == (30 if row.method == "implicit" else 0)


def test_report_csv_format(study):
    text = bench.report_csv(study)
    lines = text.splitlines()
    assert lines[0] == "# resalign report v1"
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert tuple(rows[0]) == bench.REPORT_COLUMNS
    first = dict(zip(rows[0], rows[1]))
    assert first["method"] == "nearest" and first["psnr_db"] == "inf" and first["attenuation"] == "1.000000"
    imp = next(dict(zip(rows[0], r)) for r in rows[1:] if r[0] == "implicit")
    assert imp["variant"] == "dec1-win1-w2" and imp["status"] == "ok"
    assert bench.report_csv(study) == text


def test_report_dat_layout(study):
    lines = bench.report_dat(study).splitlines()
    assert lines[0].startswith("# resalign report")
    assert lines[2].split()[0] == "nearest"
    assert any(line.startswith("implicit[dec1-win1-w2] ") for line in lines)
    assert all(len(line.split()) == 9 for line in lines[2:])


def test_divergence_is_recorded(config):
    from dataclasses import replace

    bad = replace(config, implicit=replace(config.implicit, lr=1e300))
    report = bench.run_study(bad)
    row = report.find("implicit", (0.5, 0.0))
    assert row.status == "diverged" and math.isnan(row.psnr_db)
    assert report.failures
    # classical rows are still produced
    assert report.find("bilinear", (0.5, 0.0)).status == "ok"
    assert "nan" in bench.report_csv(report)


def test_ablation_grid(config):
    report = bench.run_ablation(config)
    variants = [s.variant for s in bench.ablation_settings(config)]
    assert variants == ["dec0-win0-w2", "dec1-win0-w2", "dec0-win1-w2", "dec1-win1-w2", "dec1-win1-w1"]
    for v in variants:
        row = report.find("implicit", (0.5, 0.0), v)
        assert math.isfinite(row.psnr_db)
        w = int(v[-1])
        assert row.score_evals == w * w * 144
    assert bench.check_ablation(config, report) == []


def test_checks_flag_failures(config, study):
    from dataclasses import replace

    strict = replace(config, checks={"implicit_ge_bilinear": True})
    forged = bench.ExperimentReport(rows=[
        bench.ReportRow("bilinear", (0.5, 0.0), 20.0, 0.9, 0.7),
        bench.ReportRow("implicit", (0.5, 0.0), 19.0, 0.9, 0.7),
    ])
    msgs = bench.check_study(replace(strict, shifts=[(0.5, 0.0)]), forged)
    assert len(msgs) == 1 and "implicit_ge_bilinear" in msgs[0]


def test_write_report_files(tmp_path, study):
    paths = bench.write_report(study, tmp_path, "study")
    assert (tmp_path / "study.csv").read_text() == bench.report_csv(study)
    assert (tmp_path / "study.dat").exists()
    trace = (tmp_path / "study_loss_dec1-win1-w2.csv").read_text().splitlines()
    assert trace[0] == "iteration,loss" and len(trace) == 31
    model = load_model(tmp_path / "study_model_dec1-win1-w2.iav1")
    assert model.channels == 4 and model.window == 2
    assert paths["csv"].endswith("study.csv")


def test_cli_study_writes_and_exits_zero(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL)
    assert main(["study", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# resalign report v1")
    assert (tmp_path / "out" / "study.csv").exists()


def test_cli_study_exit_one_on_failed_check(tmp_path, capsys):
    # nearest only at a half-pixel shift has no implicit row to compare with
    cfg = tmp_path / "c.ini"
    cfg.write_text(
        SMALL.replace("methods = nearest, bilinear, bicubic, implicit", "methods = nearest, bilinear")
        .replace("implicit_ge_bilinear = false", "implicit_ge_bilinear = true")
    )
    assert main(["study", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 1
    assert "FAIL implicit_ge_bilinear" in capsys.readouterr().err


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "--seed", "13"]) == 0
    out = capsys.readouterr().out
    assert "seed=13" in out and out.strip().endswith("PASS")


def test_cli_spectrum(capsys):
    assert main(["spectrum", "--method", "bilinear", "--freqs", "0,0.25,0.5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "f_over_fs,kernel_response,transfer_magnitude,measured_attenuation"
    f0, f25, f5 = (line.split(",") for line in lines[1:])
    assert f0[1] == "1.000000"
    assert float(f25[2]) == pytest.approx(0.707107, abs=1e-6)
    assert float(f25[3]) == pytest.approx(0.70711, abs=1e-3)
    assert float(f5[1]) == pytest.approx(0.405285, abs=1e-6) and f5[3] == "nan"


def test_cli_warp(tmp_path):
    rng = np.random.default_rng(0)
    ref = (rng.integers(0, 256, (6, 7, 1)) / 255).astype(np.float32)
    flow = rng.uniform(-2, 2, (6, 7, 2)).astype(np.float32)
    write_pnm(ref, tmp_path / "r.pgm")
    write_flo(flow, tmp_path / "f.flo")
    out = tmp_path / "o.pgm"
    assert main(["warp", "--reference", str(tmp_path / "r.pgm"), "--flow", str(tmp_path / "f.flo"),
                 "--method", "nearest", "--out", str(out)]) == 0
    expected = backward_warp(read_pnm(tmp_path / "r.pgm"), read_flo(tmp_path / "f.flo"), "nearest")
    np.testing.assert_allclose(read_pnm(out), expected, atol=1e-6)


def test_cli_synth(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL)
    assert main(["synth", "--config", str(cfg), "--shift", "0.5", "0", "--height", "9",
                 "--width", "10", "--out", str(tmp_path / "pair")]) == 0
    cur = read_pnm(tmp_path / "pair" / "current.ppm")
    assert cur.shape == (9, 10, 3)
    flow = read_flo(tmp_path / "pair" / "flow.flo")
    assert flow.shape == (9, 10, 2) and np.all(flow[..., 0] == 0.5)


def test_cli_rejects_unknown_command():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
