"""Full-frame prediction, PSNR curves, runtime benchmark and CSV/SVG reports.

Frame numbers in every series and report are 1-based, counting frames of the
source video; a point at frame ``t`` scores the prediction of frame ``t``.
Recurrent models therefore start at frame 2 and the FCNN at frame K+1.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data import VideoSequence, denormalize, normalize
from .models import ModelParams, RecurrentState, fcnn_forward, param_count, recurrent_step
from .tensor import Tensor, no_grad
from .training import TrainLog

SVG_PSNR_CAP = 100.0


class EvalError(ValueError):
    pass


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """PSNR in dB between two uint8 frames; ``math.inf`` when identical."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise EvalError(f"psnr: shape mismatch {pred.shape} vs {gt.shape}")
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


@dataclass
class PsnrSeries:
    label: str
    frames: list[int]
    psnr: list[float]

    def __len__(self) -> int:
        return len(self.psnr)

    @property
    def mean(self) -> float:
        finite = [p for p in self.psnr if math.isfinite(p)]
        if not finite:
            return math.inf
        return float(np.mean(finite))


@dataclass
class Prediction:
    frames: np.ndarray  # (P, H, W) uint8 predictions
    series: PsnrSeries


def predict_video(params: ModelParams, video: VideoSequence, label: str | None = None) -> Prediction:
    """Predict every frame the model can reach, causally, and score it."""
    label = label or params.arch
    frames = video.frames
    length = len(frames)
    preds, numbers, scores = [], [], []
    with no_grad():
        if params.arch == "fcnn":
            k = params.config.input_frames
            if length < k + 1:
                raise EvalError(f"video has {length} frames; the FCNN needs at least {k + 1}")
            for t in range(k, length):
                x = normalize(frames[t - k:t])[None]
                p = denormalize(fcnn_forward(Tensor(x), params).data[0, 0])
                preds.append(p)
                numbers.append(t + 1)
                scores.append(psnr(p, frames[t]))
        else:
            if length < 2:
                raise EvalError("recurrent prediction needs at least 2 frames")
            h, w = video.dims
            state = RecurrentState.zeros(params.config, 1, h, w)
            for t in range(length - 1):
                x = normalize(frames[t])[None, None]
                out, state = recurrent_step(Tensor(x), state, params)
                p = denormalize(out.data[0, 0])
                preds.append(p)
                numbers.append(t + 2)
                scores.append(psnr(p, frames[t + 1]))
    return Prediction(np.stack(preds), PsnrSeries(label, numbers, scores))


def copy_last_frame_baseline(video: VideoSequence, label: str = "copy-last") -> PsnrSeries:
    """PSNR of predicting each frame by its predecessor."""
    f = video.frames
    if len(f) < 2:
        raise EvalError("baseline needs at least 2 frames")
    return PsnrSeries(label, list(range(2, len(f) + 1)), [psnr(f[t], f[t + 1]) for t in range(len(f) - 1)])


# --------------------------------------------------------------------------
# runtime


def hardware_descriptor() -> str:
    cpu = platform.processor() or platform.machine()
    return f"{platform.system()} {cpu} cpus={os.cpu_count()} numpy={np.__version__}"


@dataclass
class BenchResult:
    model: str
    h: int
    w: int
    ms_per_frame: float
    runs_ms: list[float]
    hardware: str

    @property
    def fps(self) -> float:
        return 1000.0 / self.ms_per_frame

    def summary_line(self) -> str:
        return (f"bench: model={self.model} h={self.h} w={self.w} "
                f"ms_per_frame={self.ms_per_frame:.3f} fps={self.fps:.4f}")


def bench_runtime(params: ModelParams, dims: tuple[int, int], n_frames: int = 5,
                  warmup: int = 3, seed: int = 0) -> BenchResult:
    """Median wall time to produce one predicted frame at ``dims``.

    Recurrent models carry their state between timed frames; the FCNN
    consumes a fresh K-frame stack each time.
    """
    h, w = dims
    rng = np.random.default_rng(seed)
    runs = []
    with no_grad():
        if params.arch == "fcnn":
            x = Tensor(rng.uniform(-1, 1, (1, params.config.input_frames, h, w)))

            def one():
                fcnn_forward(x, params)
        else:
            state = RecurrentState.zeros(params.config, 1, h, w)
            x = Tensor(rng.uniform(-1, 1, (1, 1, h, w)))

            def one():
                nonlocal state
                _, state = recurrent_step(x, state, params)

        for _ in range(warmup):
            one()
        for _ in range(n_frames):
            t0 = time.perf_counter()
            one()
            runs.append((time.perf_counter() - t0) * 1000.0)
    return BenchResult(params.arch, h, w, statistics.median(runs), runs, hardware_descriptor())


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    series: dict[str, list[PsnrSeries]] = field(default_factory=dict)  # video -> one series per model
    params: dict[str, int] = field(default_factory=dict)
    bench: dict[str, BenchResult] = field(default_factory=dict)
    training: dict[str, TrainLog] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, video: str, s: PsnrSeries) -> None:
        self.series.setdefault(video, []).append(s)

    def config_hash(self) -> str:
        blob = json.dumps(self.provenance, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(v: float) -> str:
    return "inf" if v == math.inf else repr(float(v))


def write_series_csv(path, s: PsnrSeries) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "psnr"])
        for f, p in zip(s.frames, s.psnr):
            w.writerow([f, _fmt(p)])
    return path


def read_series_csv(path, label: str = "") -> PsnrSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return PsnrSeries(label, [int(r["frame"]) for r in rows], [float(r["psnr"]) for r in rows])


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def line_chart_svg(series: list[tuple[str, list[float], list[float]]], title: str,
                   xlabel: str, ylabel: str, cap: float | None = None,
                   width: int = 640, height: int = 400) -> str:
    """Minimal SVG 1.1 chart: one ``<polyline>`` per series plus a legend."""
    left, right, top, bottom = 60, 150, 30, 45
    pw, ph = width - left - right, height - top - bottom

    def clip(v):
        if cap is not None and v > cap:
            return cap
        return v

    xs = [x for _, xv, _ in series for x in xv]
    ys = [clip(y) for _, _, yv in series for y in yv if math.isfinite(clip(y))]
    x0, x1 = (min(xs), max(xs)) if xs else (0, 1)
    y0, y1 = (min(ys), max(ys)) if ys else (0, 1)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1 - (clip(y) - y0) / (y1 - y0)) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{top + ph / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = y0 + frac * (y1 - y0)
        xv = x0 + frac * (x1 - x0)
        out.append(f'<text x="{left - 4}" y="{sy(yv) + 4:.1f}" text-anchor="end" font-size="10">{yv:.3g}</text>')
        out.append(f'<text x="{sx(xv):.1f}" y="{top + ph + 14}" text-anchor="middle" font-size="10">{xv:.6g}</text>')
    for i, (label, xv, yv) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xv, yv) if math.isfinite(clip(y)))
        out.append(f'<polyline data-series="{escape(label)}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 32}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write per-video CSVs and charts, the training-curve chart and a summary."""
    if not report.series and not report.training:
        raise EvalError("empty report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise EvalError(f"cannot create report directory {out}: {e}") from e
    written: list[Path] = []
    for video, group in report.series.items():
        for s in group:
            written.append(write_series_csv(out / f"{_safe(video)}__{_safe(s.label)}.csv", s))
        svg = line_chart_svg([(s.label, s.frames, s.psnr) for s in group],
                             f"{video}: prediction PSNR", "frame", "PSNR (dB)", cap=SVG_PSNR_CAP)
        p = out / f"{_safe(video)}.svg"
        p.write_text(svg)
        written.append(p)
    if report.training:
        curves = [(label, [r.frames for r in lg.rows], [r.loss for r in lg.rows])
                  for label, lg in report.training.items()]
        p = out / "training_loss.svg"
        p.write_text(line_chart_svg(curves, "loss vs processed frames", "frames processed", "MSE loss"))
        written.append(p)
        for label, lg in report.training.items():
            written.append(lg.write_csv(out / f"train__{_safe(label)}.csv"))

    p = out / "summary.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video", "model", "points", "first_frame", "mean_psnr"])
        for video, group in report.series.items():
            for s in group:
                w.writerow([video, s.label, len(s), s.frames[0] if s.frames else "", _fmt(s.mean)])
    written.append(p)

    header = {
        "frame_numbering": "1-based source frame index of the predicted frame; "
                           "recurrent series start at 2, FCNN series at K+1",
        "psnr_infinity": f"CSV keeps 'inf'; SVG caps at {SVG_PSNR_CAP} dB",
        "config_hash": report.config_hash(),
        "provenance": report.provenance,
        "params": report.params,
        "bench": {k: {"ms_per_frame": b.ms_per_frame, "fps": b.fps, "hardware": b.hardware,
                      "h": b.h, "w": b.w} for k, b in report.bench.items()},
    }
    p = out / "report.json"
    p.write_text(json.dumps(header, indent=2, sort_keys=True, default=str) + "\n")
    written.append(p)
    return written


def model_summary(params: ModelParams) -> dict:
    return {"arch": params.arch, "params": param_count(params)}
