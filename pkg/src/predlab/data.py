"""Grayscale video I/O, normalisation, patch-sequence samplers and synthetic videos."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class VideoSequence:
    frames: np.ndarray  # (T, H, W) uint8
    fps: float | None = None
    source: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3 or len(self.frames) < 1:
            raise DataError(f"a video needs shape (T, H, W) with T >= 1, got {self.frames.shape}")
        if self.frames.dtype != np.uint8:
            raise DataError(f"frames must be uint8, got {self.frames.dtype}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dims(self) -> tuple[int, int]:
        return self.frames.shape[1:]


# --------------------------------------------------------------------------
# normalisation


def normalize(frames: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float64 [-1, 1]."""
    return np.asarray(frames, dtype=np.float64) / 127.5 - 1.0


def denormalize(values: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and map back to the nearest uint8 level."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.rint((v + 1.0) * 127.5).astype(np.uint8)


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (..., 3) uint8 image."""
    y = np.asarray(rgb, dtype=np.float64) @ np.array([0.299, 0.587, 0.114])
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# PGM / Y4M

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    for _ in range(4):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise DataError(f"{path}: unsupported PGM maxval {maxval} (only 255)")
    pos += 1  # single whitespace byte after maxval
    data = raw[pos:pos + w * h]
    if len(data) != w * h:
        raise DataError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, frame: np.ndarray) -> None:
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(frame.tobytes())


def _y4m_chroma_bytes(tag: str, w: int, h: int) -> int:
    if tag.startswith("420"):
        return 2 * ((w + 1) // 2) * ((h + 1) // 2)
    if tag == "mono":
        return 0
    raise DataError(f"unsupported Y4M colourspace C{tag} (accepted: C420*, Cmono)")


def read_y4m(path) -> VideoSequence:
    """Y plane of every frame; chroma is skipped."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if not raw.startswith(b"YUV4MPEG2") or nl < 0:
        raise DataError(f"{path}: not a YUV4MPEG2 file")
    params = raw[:nl].decode("ascii").split()[1:]
    w = h = None
    tag, fps = "420jpeg", None
    for p in params:
        key, val = p[0], p[1:]
        if key == "W":
            w = int(val)
        elif key == "H":
            h = int(val)
        elif key == "C":
            tag = val
        elif key == "F":
            num, den = val.split(":")
            fps = int(num) / int(den) if int(den) else None
    if not w or not h:
        raise DataError(f"{path}: Y4M header lacks width/height")
    chroma = _y4m_chroma_bytes(tag, w, h)

    frames, pos = [], nl + 1
    while pos < len(raw):
        end = raw.find(b"\n", pos)
        if end < 0 or not raw.startswith(b"FRAME", pos):
            raise DataError(f"{path}: bad frame marker at byte {pos}")
        pos = end + 1
        y = raw[pos:pos + w * h]
        if len(y) != w * h or pos + w * h + chroma > len(raw):
            raise DataError(f"{path}: truncated frame {len(frames)}")
        frames.append(np.frombuffer(y, dtype=np.uint8).reshape(h, w))
        pos += w * h + chroma
    if not frames:
        raise DataError(f"{path}: no frames")
    return VideoSequence(np.stack(frames), fps=fps, source=str(path))


def write_y4m(path, video: VideoSequence) -> None:
    t, h, w = video.frames.shape
    fps = video.fps or 25
    with open(path, "wb") as fh:
        fh.write(f"YUV4MPEG2 W{w} H{h} F{int(round(fps))}:1 Ip A1:1 Cmono\n".encode())
        for f in video.frames:
            fh.write(b"FRAME\n")
            fh.write(np.ascontiguousarray(f).tobytes())


def load_sequence(path) -> VideoSequence:
    """Load a directory of P5 PGM frames (sorted by name) or a ``.y4m`` file."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
        if not files:
            raise DataError(f"{path}: no .pgm frames")
        frames = [read_pgm(f) for f in files]
        if len({f.shape for f in frames}) != 1:
            raise DataError(f"{path}: frames have inconsistent dimensions")
        return VideoSequence(np.stack(frames), source=str(path))
    if path.suffix.lower() == ".y4m":
        return read_y4m(path)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    raise DataError(f"{path}: expected a PGM directory or .y4m file")


def save_sequence(video: VideoSequence, path) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".y4m":
        write_y4m(path, video)
        return path
    path.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(len(video))))
    for i, f in enumerate(video.frames):
        write_pgm(path / f"frame_{i:0{digits}d}.pgm", f)
    return path


# --------------------------------------------------------------------------
# samplers


@dataclass
class SamplerConfig:
    patch: tuple[int, int] = (184, 184)
    duration: int = 8
    batch: int = 4
    motion_threshold: float = 0.0
    low_motion_accept_prob: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.duration < 2:
            raise ValueError("duration must be >= 2")
        if self.motion_threshold < 0:
            raise ValueError("motion threshold must be >= 0")


@dataclass
class PatchSequenceBatch:
    """Normalised patch sequences; ``targets[:, t]`` is the frame after ``inputs[:, t]``."""

    inputs: np.ndarray  # (N, T, ph, pw)
    targets: np.ndarray  # (N, T, ph, pw)
    origin: list[tuple[int, int, int, int]] = field(default_factory=list)  # (video, start, y, x)

    @property
    def frames(self) -> int:
        n, t = self.inputs.shape[:2]
        return n * t


def worker_rng(seed: int, worker_id: int = 0) -> np.random.Generator:
    """Independent stream for one sampling worker."""
    return np.random.default_rng(np.random.SeedSequence([seed, worker_id]))


def _random_crop(rng, videos: Sequence[VideoSequence], eligible: Sequence[int], span: int,
                 patch: tuple[int, int]) -> tuple[int, int, int, int, np.ndarray]:
    vi = eligible[rng.integers(len(eligible))]
    v = videos[vi]
    ph, pw = patch
    h, w = v.dims
    s = int(rng.integers(len(v) - span + 1))
    y = int(rng.integers(h - ph + 1))
    x = int(rng.integers(w - pw + 1))
    return vi, s, y, x, v.frames[s:s + span, y:y + ph, x:x + pw]


def _eligible(videos: Sequence[VideoSequence], span: int, patch: tuple[int, int]) -> list[int]:
    ph, pw = patch
    return [i for i, v in enumerate(videos)
            if len(v) >= span and v.dims[0] >= ph and v.dims[1] >= pw]


def sample_recurrent_minibatch(videos: Sequence[VideoSequence], cfg: SamplerConfig,
                               rng: np.random.Generator) -> PatchSequenceBatch:
    """Random video, start frame and crop per sample; ``T + 1`` source frames each."""
    t = cfg.duration
    eligible = _eligible(videos, t + 1, cfg.patch)
    if not eligible:
        raise DataError(f"no video has >= {t + 1} frames and frame size >= {cfg.patch}")
    inputs, targets, origin = [], [], []
    for _ in range(cfg.batch):
        vi, s, y, x, clip = _random_crop(rng, videos, eligible, t + 1, cfg.patch)
        clip = normalize(clip)
        inputs.append(clip[:-1])
        targets.append(clip[1:])
        origin.append((vi, s, y, x))
    return PatchSequenceBatch(np.stack(inputs), np.stack(targets), origin)


class RecurrentSampler:
    """Seeded stream of recurrent minibatches."""

    def __init__(self, videos: Sequence[VideoSequence], cfg: SamplerConfig, worker_id: int = 0):
        self.videos = list(videos)
        self.cfg = cfg
        self.rng = worker_rng(cfg.seed, worker_id)

    def __iter__(self):
        return self

    def __next__(self) -> PatchSequenceBatch:
        return sample_recurrent_minibatch(self.videos, self.cfg, self.rng)


def motion_statistic(clip: np.ndarray) -> float:
    """Smallest sum of squared differences between consecutive normalised frames."""
    c = normalize(clip) if clip.dtype == np.uint8 else np.asarray(clip, dtype=np.float64)
    d = np.diff(c, axis=0)
    return float((d * d).sum(axis=(1, 2)).min())


def accept_candidate(clip: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator) -> tuple[bool, bool]:
    """Rejection test for one candidate clip; returns ``(high_motion, accepted)``."""
    moving = cfg.motion_threshold == 0 or motion_statistic(clip) > cfg.motion_threshold
    # the Bernoulli draw happens for every candidate so the stream does not
    # depend on the threshold
    coin = rng.random()
    return moving, bool(moving or coin < cfg.low_motion_accept_prob)


@dataclass
class FcnnDataset:
    patches: np.ndarray  # (count, T, ph, pw) normalised
    attempts: int
    high_motion: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.patches) / self.attempts if self.attempts else 0.0


def sample_fcnn_dataset(videos: Sequence[VideoSequence], cfg: SamplerConfig, count: int,
                        rng: np.random.Generator, max_attempts: int | None = None) -> FcnnDataset:
    """Rejection-sample ``count`` patch sequences of ``cfg.duration`` frames.

    A candidate is kept if its motion statistic exceeds the threshold, and
    otherwise with probability ``cfg.low_motion_accept_prob``.
    """
    if max_attempts is None:
        max_attempts = max(1000, 200 * count)
    eligible = _eligible(videos, cfg.duration, cfg.patch)
    if not eligible:
        raise DataError(f"no video has >= {cfg.duration} frames and frame size >= {cfg.patch}")
    kept, attempts, high = [], 0, 0
    while len(kept) < count:
        if attempts >= max_attempts:
            raise DataError(f"only {len(kept)}/{count} patch sequences accepted within the "
                            f"attempt budget of {max_attempts}")
        attempts += 1
        *_, clip = _random_crop(rng, videos, eligible, cfg.duration, cfg.patch)
        moving, accept = accept_candidate(clip, cfg, rng)
        high += moving
        if accept:
            kept.append(normalize(clip))
    shape = (0, cfg.duration, *cfg.patch)
    patches = np.stack(kept) if kept else np.zeros(shape)
    return FcnnDataset(patches, attempts, high)


def calibrate_motion_threshold(videos: Sequence[VideoSequence], cfg: SamplerConfig,
                               target_rate: float = 0.3, samples: int = 500, seed: int = 0) -> float:
    """Threshold under which ``target_rate`` of random candidates count as high-motion."""
    rng = worker_rng(seed, 10_000)
    eligible = _eligible(videos, cfg.duration, cfg.patch)
    if not eligible:
        raise DataError("no eligible videos for calibration")
    stats = [motion_statistic(_random_crop(rng, videos, eligible, cfg.duration, cfg.patch)[-1])
             for _ in range(samples)]
    return float(np.quantile(stats, 1.0 - target_rate))


def save_patch_cache(directory, patches: np.ndarray) -> Path:
    """Write each patch sequence as a raw little-endian float64 blob plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, p in enumerate(patches):
        name = f"patch_{i:07d}.f64"
        (directory / name).write_bytes(np.ascontiguousarray(p, dtype="<f8").tobytes())
        lines.append(f"{name} {'x'.join(str(s) for s in p.shape)}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
    return directory


def load_patch_cache(directory) -> np.ndarray:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.is_file():
        raise DataError(f"{directory}: no manifest.txt")
    out = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, shape = line.split()
        dims = tuple(int(s) for s in shape.split("x"))
        out.append(np.frombuffer((directory / name).read_bytes(), dtype="<f8").reshape(dims))
    return np.stack(out).astype(np.float64)


# --------------------------------------------------------------------------
# synthetic videos


def _texture(rng: np.random.Generator, h: int, w: int, smooth: float) -> np.ndarray:
    """Periodic random texture stretched to the full 0..255 range."""
    tex = rng.random((h, w))
    if smooth > 0:
        fy = np.fft.fftfreq(h)[:, None]
        fx = np.fft.fftfreq(w)[None, :]
        kernel = np.exp(-2 * (np.pi * smooth) ** 2 * (fy ** 2 + fx ** 2))
        tex = np.fft.ifft2(np.fft.fft2(tex) * kernel).real
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return np.rint(tex * 255).astype(np.uint8)


def gen_synthetic_video(kind: str, dims: tuple[int, int], length: int,
                        velocity: tuple[int, int] = (1, 0), seed: int = 0,
                        smooth: float = 1.0, period: int = 16) -> VideoSequence:
    """Procedural grayscale video.

    ``translate`` rolls a fixed texture by ``velocity`` (rows, cols) each
    frame; ``oscillate`` moves it back and forth by up to two ``velocity``
    steps, following a sinusoid with the given period; ``noise`` draws
    independent uniform frames. ``smooth`` is the Gaussian blur (pixels)
    applied to the periodic texture.
    """
    h, w = dims
    if h <= 0 or w <= 0 or length <= 0:
        raise ValueError("dims and length must be positive")
    rng = np.random.default_rng(seed)
    if kind == "noise":
        return VideoSequence(rng.integers(0, 256, size=(length, h, w), dtype=np.uint8),
                             source=f"synthetic:noise:seed={seed}")
    tex = _texture(rng, h, w, smooth)
    vy, vx = velocity
    frames = []
    for t in range(length):
        if kind == "translate":
            k = t
        elif kind == "oscillate":
            k = int(np.rint(2 * np.sin(2 * np.pi * t / period)))
        else:
            raise ValueError(f"unknown synthetic kind {kind!r}")
        frames.append(np.roll(tex, (k * vy, k * vx), axis=(0, 1)))
    return VideoSequence(np.stack(frames), source=f"synthetic:{kind}:v={velocity}:seed={seed}")
