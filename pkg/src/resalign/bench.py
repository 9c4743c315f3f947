"""Alignment study and ablations on synthetic scenes.

A study config is an INI file::

    [study]
    height = 16
    width = 16
    shifts = 0.0; 0.25; 0.5 0.0        # "dx" or "dx dy", ';'-separated
    methods = nearest, bilinear, bicubic, implicit

    [implicit]
    window = 2
    heads = 1
    iterations = 2000
    lr = 0.01
    seed = 0
    train_shifts = 0.25; 0.5; 0.75
    train_crops = 4

    [scene]                            # or `scene = path` under [study]
    channels = 8
    offset = 0.5
    component1 = 0.4 0.25 0.0 random

The implicit aligner is trained once per configuration on
``train_shifts x train_crops`` pairs cut from the scene at seeded origins and
evaluated on the origin-0 pair for each study shift.
"""

import configparser
import csv
import io
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .implicit_align import AlignModel, align, save_model
from .metrics import psnr, ssim
from .resampling import ResampleMethod, backward_warp
from .synth import load_scene, make_pair, scene_from_section
from .train import TrainingDiverged, fit

REPORT_VERSION = 1
REPORT_COLUMNS = (
    "method",
    "variant",
    "shift_x",
    "shift_y",
    "psnr_db",
    "ssim",
    "attenuation",
    "score_evals",
    "train_iterations",
    "status",
)
CLASSICAL = tuple(m.value for m in ResampleMethod)
METHODS = CLASSICAL + ("implicit",)
ATTENUATION_BORDER = 4


@dataclass(frozen=True)
class ImplicitSettings:
    window: int = 2
    heads: int = 1
    iterations: int = 2000
    lr: float = 1e-2
    seed: int = 0
    schedule: str = "constant"
    pe_decimal: bool = True
    pe_window: bool = True
    train_shifts: tuple = ()
    train_crops: int = 4

    @property
    def variant(self):
        return f"dec{int(self.pe_decimal)}-win{int(self.pe_window)}-w{self.window}"


@dataclass
class ExperimentConfig:
    scene: object
    height: int
    width: int
    shifts: list
    methods: list
    implicit: ImplicitSettings = field(default_factory=ImplicitSettings)
    ablation_windows: tuple = (1, 2, 3, 4)
    checks: dict = field(default_factory=dict)
    peak: float = 1.0

    def __post_init__(self):
        if not self.methods:
            raise ValueError("methods must not be empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if not self.shifts:
            raise ValueError("shifts must not be empty")
        if "implicit" in self.methods and self.channels % 4:
            raise ValueError(f"implicit alignment needs channels divisible by 4, got {self.channels}")

    @property
    def channels(self):
        return self.scene.n_channels


@dataclass
class ReportRow:
    method: str
    shift: tuple
    psnr_db: float
    ssim: float
    attenuation: float
    score_evals: int = 0
    train_iterations: int = 0
    variant: str = ""
    status: str = "ok"


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def find(self, method, shift, variant=None):
        for row in self.rows:
            if row.method == method and row.shift == tuple(shift) and (
                variant is None or row.variant == variant
            ):
                return row
        raise KeyError((method, shift, variant))


def parse_shifts(text):
    shifts = []
    for part in text.split(";"):
        vals = [float(v) for v in part.replace(",", " ").split()]
        if not vals:
            continue
        if len(vals) == 1:
            vals.append(0.0)
        if len(vals) != 2:
            raise ValueError(f"bad shift {part!r}")
        shifts.append(tuple(vals))
    return shifts


def _bool(text):
    return configparser.ConfigParser.BOOLEAN_STATES[str(text).strip().lower()]


def parse_config(text, base_dir="."):
    """Build an :class:`ExperimentConfig` from INI text."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string(text)
    if "study" not in parser:
        raise ValueError("config needs a [study] section")
    study = parser["study"]
    if "scene" in parser:
        scene = scene_from_section(parser["scene"])
    elif "scene" in study:
        scene = load_scene(os.path.join(base_dir, study["scene"]))
    else:
        raise ValueError("config needs a [scene] section or a scene path")

    shifts = parse_shifts(study.get("shifts", "0.5"))
    methods = [m.strip() for m in study.get("methods", ",".join(METHODS)).split(",") if m.strip()]
    imp = parser["implicit"] if "implicit" in parser else {}
    if "bands" in imp and int(imp["bands"]) * 4 != scene.n_channels:
        raise ValueError(f"bands must equal channels / 4 = {scene.n_channels / 4}")
    train_shifts = parse_shifts(imp["train_shifts"]) if "train_shifts" in imp else shifts
    implicit = ImplicitSettings(
        window=int(imp.get("window", 2)),
        heads=int(imp.get("heads", 1)),
        iterations=int(imp.get("iterations", 2000)),
        lr=float(imp.get("lr", 1e-2)),
        seed=int(imp.get("seed", 0)),
        schedule=imp.get("schedule", "constant"),
        pe_decimal=_bool(imp.get("pe_decimal", "true")),
        pe_window=_bool(imp.get("pe_window", "true")),
        train_shifts=tuple(train_shifts),
        train_crops=int(imp.get("train_crops", 4)),
    )
    abl = parser["ablation"] if "ablation" in parser else {}
    windows = tuple(int(w) for w in abl.get("windows", "1, 2, 3, 4").split(","))
    checks = {k: _bool(v) for k, v in parser["checks"].items()} if "checks" in parser else {}
    return ExperimentConfig(
        scene=scene,
        height=int(study.get("height", 16)),
        width=int(study.get("width", 16)),
        shifts=shifts,
        methods=methods,
        implicit=implicit,
        ablation_windows=windows,
        checks=checks,
        peak=float(study.get("peak", 1.0)),
    )


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), os.path.dirname(os.path.abspath(path)))


def fit_amplitude_2d(grid, freq, border=ATTENUATION_BORDER):
    """Per-channel least-squares amplitude of one 2-D sinusoid (with DC term)."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w, c = grid.shape
    ys, xs = np.mgrid[border:h - border, border:w - border]
    phase = 2 * np.pi * (freq[0] * xs + freq[1] * ys).ravel()
    basis = np.stack([np.sin(phase), np.cos(phase), np.ones_like(phase)], axis=1)
    if np.linalg.matrix_rank(basis) < 3:
        raise ValueError(f"degenerate amplitude fit at frequency {freq}")
    vals = grid[border:h - border, border:w - border].reshape(-1, c)
    coef, *_ = np.linalg.lstsq(basis, vals, rcond=None)
    return np.hypot(coef[0], coef[1])


def attenuation(aligned, target, scene):
    """Amplitude ratio aligned/target at the scene's first sinusoid, channel mean."""
    if not scene.channels or not scene.channels[0]:
        return math.nan
    s = scene.channels[0][0]
    ratio = fit_amplitude_2d(aligned, (s.freq_x, s.freq_y)) / fit_amplitude_2d(
        target, (s.freq_x, s.freq_y)
    )
    return float(np.mean(ratio))


def _score(method, aligned, target, config, shift, **extra):
    return ReportRow(
        method=method,
        shift=tuple(shift),
        psnr_db=psnr(aligned, target, config.peak),
        ssim=ssim(aligned, target, config.peak),
        attenuation=attenuation(aligned, target, config.scene),
        **extra,
    )


def training_set(config, settings):
    data = []
    for s_idx, shift in enumerate(settings.train_shifts):
        for k in range(settings.train_crops):
            seed = settings.seed * 100_000 + s_idx * 1000 + k + 1
            data.append(make_pair(config.scene, config.height, config.width, shift, seed))
    return data


def train_implicit(config, settings):
    """Train one implicit aligner; returns ``(model, trace)``."""
    model = AlignModel.initialize(
        config.channels,
        window=settings.window,
        heads=settings.heads,
        seed=settings.seed,
        pe_decimal=settings.pe_decimal,
        pe_window=settings.pe_window,
    )
    return fit(
        model,
        training_set(config, settings),
        settings.iterations,
        lr=settings.lr,
        seed=settings.seed,
        schedule=settings.schedule,
    )


def _implicit_rows(config, settings, report):
    variant = settings.variant
    try:
        model, trace = train_implicit(config, settings)
    except TrainingDiverged as exc:
        report.traces[variant] = exc.trace
        report.failures.append(f"{variant}: {exc}")
        for shift in config.shifts:
            report.rows.append(
                ReportRow("implicit", tuple(shift), math.nan, math.nan, math.nan,
                          variant=variant, train_iterations=len(exc.trace), status="diverged")
            )
        return
    report.traces[variant] = trace
    report.models[variant] = model
    for shift in config.shifts:
        current, reference, flow, target = make_pair(
            config.scene, config.height, config.width, shift
        )
        aligned, stats = align(current, reference, flow, model)
        report.rows.append(
            _score("implicit", aligned, target, config, shift, variant=variant,
                   score_evals=stats.score_evals, train_iterations=len(trace))
        )


def run_study(config):
    """Score every configured method at every shift."""
    report = ExperimentReport()
    for shift in config.shifts:
        current, reference, flow, target = make_pair(
            config.scene, config.height, config.width, shift
        )
        for method in config.methods:
            if method in CLASSICAL:
                aligned = backward_warp(reference, flow, method)
                report.rows.append(_score(method, aligned, target, config, shift))
    if "implicit" in config.methods:
        _implicit_rows(config, config.implicit, report)
    order = {m: i for i, m in enumerate(config.methods)}
    shift_order = {tuple(s): i for i, s in enumerate(config.shifts)}
    report.rows.sort(key=lambda r: (shift_order[r.shift], order[r.method]))
    return report


def ablation_settings(config):
    """PE on/off grid at the configured window, then the window-size sweep."""
    base = config.implicit
    cells = [
        replace(base, pe_decimal=dec, pe_window=win)
        for dec, win in ((False, False), (True, False), (False, True), (True, True))
    ]
    for w in config.ablation_windows:
        cell = replace(base, window=w, pe_decimal=True, pe_window=True)
        if cell not in cells:
            cells.append(cell)
    return cells


def run_ablation(config):
    """Train and score each ablation cell independently with the shared seed."""
    report = ExperimentReport()
    for settings in ablation_settings(config):
        _implicit_rows(config, settings, report)
    return report


def check_study(config, report):
    """Evaluate enabled ``[checks]``; returns a list of failure messages."""
    failures = []
    if config.checks.get("implicit_ge_bilinear"):
        for shift in config.shifts:
            try:
                imp = report.find("implicit", shift)
                bil = report.find("bilinear", shift)
            except KeyError:
                failures.append(f"implicit_ge_bilinear: missing rows at shift {shift}")
                continue
            if not imp.psnr_db >= bil.psnr_db:
                failures.append(
                    f"implicit_ge_bilinear: {imp.psnr_db:.4f} < {bil.psnr_db:.4f} dB at shift {shift}"
                )
    return failures


def check_ablation(config, report):
    failures = []
    if config.checks.get("pe_helps"):
        w = config.implicit.window
        for shift in config.shifts:
            both = report.find("implicit", shift, f"dec1-win1-w{w}")
            none = report.find("implicit", shift, f"dec0-win0-w{w}")
            if not both.psnr_db >= none.psnr_db:
                failures.append(
                    f"pe_helps: {both.psnr_db:.4f} < {none.psnr_db:.4f} dB at shift {shift}"
                )
    return failures


def _fmt(value, digits=6):
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.{digits}f}"
    return str(value)


def _row_fields(row):
    return [
        row.method,
        row.variant,
        f"{row.shift[0]:g}",
        f"{row.shift[1]:g}",
        _fmt(row.psnr_db, 4),
        _fmt(row.ssim),
        _fmt(row.attenuation),
        str(row.score_evals),
        str(row.train_iterations),
        row.status,
    ]


def report_csv(report):
    buf = io.StringIO()
    buf.write(f"# resalign report v{REPORT_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in report.rows:
        writer.writerow(_row_fields(row))
    return buf.getvalue()


def report_dat(report):
    """Whitespace-separated layout for gnuplot; variant folded into the method name."""
    lines = [f"# resalign report v{REPORT_VERSION}", "# " + " ".join(c for c in REPORT_COLUMNS if c != "variant")]
    for row in report.rows:
        fields = _row_fields(row)
        name = fields[0] + (f"[{fields[1]}]" if fields[1] else "")
        lines.append(" ".join([name] + fields[2:]))
    return "\n".join(lines) + "\n"


def trace_csv(trace):
    lines = ["iteration,loss"]
    lines += [f"{i},{loss!r}" for i, loss in enumerate(trace)]
    return "\n".join(lines) + "\n"


def write_report(report, out_dir, name):
    """Write ``<name>.csv``, ``<name>.dat``, loss traces and model checkpoints."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for ext, text in (("csv", report_csv(report)), ("dat", report_dat(report))):
        path = os.path.join(out_dir, f"{name}.{ext}")
        with open(path, "w", newline="") as fh:
            fh.write(text)
        paths[ext] = path
    for variant, trace in report.traces.items():
        with open(os.path.join(out_dir, f"{name}_loss_{variant}.csv"), "w") as fh:
            fh.write(trace_csv(trace))
    for variant, model in report.models.items():
        save_model(model, os.path.join(out_dir, f"{name}_model_{variant}.iav1"))
    return paths
