"""Stateless TBPTT, stateful TBPTT and FCNN training loops."""

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import PatchSequenceBatch, SamplerConfig, VideoSequence, calibrate_motion_threshold, \
    sample_fcnn_dataset, sample_recurrent_minibatch, worker_rng
from .models import ModelParams, RecurrentState, fcnn_forward, recurrent_step, save_checkpoint
from .optim import AdamState, DivergenceError, PlateauSchedule, adam_step, plateau_update
from .tensor import Tensor, backward, mse_loss, recorded_nodes

log = logging.getLogger(__name__)

MODES = ("stateless", "stateful", "fcnn")

_DEFAULTS = {
    "stateless": dict(lr=1e-5, batch=4, trunc=8, seq_len=8, patch=(184, 184)),
    "stateful": dict(lr=1e-5, batch=4, trunc=1, seq_len=96, patch=(184, 184)),
    "fcnn": dict(lr=1e-4, batch=32, trunc=8, seq_len=9, patch=(48, 48)),
}


@dataclass
class TrainConfig:
    mode: str = "stateful"
    lr: float = 1e-5
    batch: int = 4
    trunc: int = 1
    seq_len: int = 96
    patch: tuple[int, int] = (184, 184)
    total_steps: int | None = None
    frame_budget: int | None = None
    seed: int = 0
    log_every: int = 1
    motion_threshold: float | None = None
    patience: int = 6000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "stateless" and self.trunc != self.seq_len:
            raise ValueError("stateless training backpropagates through the whole sequence: trunc == seq_len")
        if self.mode == "stateful" and self.trunc != 1:
            raise ValueError("stateful training uses truncation 1")
        if min(self.lr, self.batch, self.seq_len, self.log_every) <= 0:
            raise ValueError("lr, batch, seq_len and log_every must be positive")
        if self.total_steps is None and self.frame_budget is None:
            raise ValueError("set total_steps or frame_budget")

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "TrainConfig":
        """Mode defaults (learning rate, batch, window, patch) with overrides."""
        if mode not in _DEFAULTS:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        return cls(mode=mode, **{**_DEFAULTS[mode], **overrides})

    @property
    def frames_per_update(self) -> int:
        if self.mode == "stateful":
            return self.batch
        if self.mode == "stateless":
            return self.batch * self.seq_len
        return self.batch * (self.seq_len - 1)


@dataclass
class LogRow:
    frames: int
    updates: int
    loss: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    rows: list[LogRow] = field(default_factory=list)
    update_losses: list[float] = field(default_factory=list)
    tape_nodes: list[int] = field(default_factory=list)
    recorded_nodes: list[int] = field(default_factory=list)

    @property
    def updates(self) -> int:
        return len(self.update_losses)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frames", "updates", "loss", "lr", "seconds"])
            for r in self.rows:
                w.writerow([r.frames, r.updates, repr(r.loss), repr(r.lr), f"{r.seconds:.6f}"])
        return path

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        with open(path, newline="") as fh:
            rows = [LogRow(int(r["frames"]), int(r["updates"]), float(r["loss"]), float(r["lr"]),
                           float(r["seconds"])) for r in csv.DictReader(fh)]
        return cls(rows)


@dataclass
class StepResult:
    """``recorded_nodes`` counts every op taped during the update;
    ``tape_nodes`` only those reachable from the loss."""

    loss: float
    tape_nodes: int
    predictions: list[np.ndarray] = field(default_factory=list)
    recorded_nodes: int = 0


def _check_finite(loss: Tensor, context: str) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss {value} at {context}")
    return value


def _frame(seq: np.ndarray, t: int) -> Tensor:
    return Tensor(seq[:, t:t + 1])


def train_stateless_step(params: ModelParams, batch: PatchSequenceBatch, opt: AdamState,
                         context: str = "stateless step") -> StepResult:
    """Zero state, unroll the whole window, score only the last frame, one update."""
    n, t_len, h, w = batch.inputs.shape
    start = recorded_nodes()
    state = RecurrentState.zeros(params.config, n, h, w)
    preds = []
    for t in range(t_len):
        pred, state = recurrent_step(_frame(batch.inputs, t), state, params)
        preds.append(pred.data)
    loss = mse_loss(pred, _frame(batch.targets, t_len - 1))
    recorded = recorded_nodes() - start
    value = _check_finite(loss, context)
    tape = backward(loss)
    adam_step(params.tensors, opt)
    return StepResult(value, len(tape), preds, recorded)


def train_stateful_step(params: ModelParams, carried: RecurrentState, frame: np.ndarray,
                        target: np.ndarray, opt: AdamState,
                        context: str = "stateful step") -> tuple[StepResult, RecurrentState]:
    """One frame forward, one-step backward, one update; returns the detached new state.

    ``frame`` and ``target`` are (N, 1, H, W) normalised arrays.
    """
    start = recorded_nodes()
    pred, state = recurrent_step(Tensor(frame), carried, params)
    loss = mse_loss(pred, Tensor(target))
    recorded = recorded_nodes() - start
    value = _check_finite(loss, context)
    tape = backward(loss)
    adam_step(params.tensors, opt)
    return StepResult(value, len(tape), [pred.data], recorded), state.detach()


def train_fcnn_step(params: ModelParams, batch: np.ndarray, opt: AdamState,
                    schedule: PlateauSchedule | None = None, context: str = "fcnn step") -> StepResult:
    """``batch`` is (N, K+1, H, W): the first K frames predict the last."""
    k = params.config.input_frames
    if batch.ndim != 4 or batch.shape[1] != k + 1:
        raise ValueError(f"expected (N, {k + 1}, H, W) patch sequences, got {batch.shape}")
    start = recorded_nodes()
    pred = fcnn_forward(Tensor(batch[:, :k]), params)
    loss = mse_loss(pred, Tensor(batch[:, k:]))
    recorded = recorded_nodes() - start
    value = _check_finite(loss, context)
    tape = backward(loss)
    adam_step(params.tensors, opt)
    if schedule is not None:
        plateau_update(schedule, value, opt)
    return StepResult(value, len(tape), [pred.data], recorded)


def _updates_allowed(cfg: TrainConfig, updates: int, frames: int) -> bool:
    if cfg.total_steps is not None and updates >= cfg.total_steps:
        return False
    if cfg.frame_budget is not None and frames + cfg.frames_per_update > cfg.frame_budget:
        return False
    return True


class _Prefetcher:
    """Draws batches on one background thread, ``depth`` ahead of the consumer.

    A single producer consumes the sampling RNG in the same order as the
    synchronous loop, so results do not depend on whether prefetching is on.
    """

    def __init__(self, draw, depth: int):
        self._draw = draw
        self._q: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                item = (self._draw(), None)
            except Exception as e:  # handed to the consumer
                item = (None, e)
            while not self._stop.is_set():
                try:
                    self._q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if item[1] is not None:
                return

    def __call__(self):
        batch, err = self._q.get()
        if err is not None:
            raise err
        return batch

    def close(self) -> None:
        self._stop.set()
        self._thread.join()


def run_training(cfg: TrainConfig, videos: Sequence[VideoSequence], params: ModelParams,
                 opt: AdamState | None = None, checkpoint_dir=None,
                 on_log=None, prefetch: int = 0) -> TrainLog:
    """Drive the per-mode step until the step or frame budget runs out.

    A log row is emitted every ``cfg.log_every`` updates with the mean update
    loss over that window; a checkpoint is written alongside when
    ``checkpoint_dir`` is given. On divergence the current (last good)
    parameters are saved to ``last_good.ckpt`` before re-raising.
    ``prefetch > 0`` samples that many minibatches ahead on a worker thread.
    """
    if (cfg.mode == "fcnn") != (params.arch == "fcnn"):
        raise ValueError(f"mode {cfg.mode!r} cannot train a {params.arch!r} model")
    opt = opt or AdamState(lr=cfg.lr)
    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckdir:
        ckdir.mkdir(parents=True, exist_ok=True)
    rng = worker_rng(cfg.seed)
    tlog = TrainLog()
    frames = 0
    window: list[float] = []
    t0 = time.perf_counter()

    def record(res: StepResult) -> None:
        nonlocal frames
        frames += cfg.frames_per_update
        tlog.update_losses.append(res.loss)
        tlog.tape_nodes.append(res.tape_nodes)
        tlog.recorded_nodes.append(res.recorded_nodes)
        window.append(res.loss)
        if tlog.updates % cfg.log_every == 0:
            flush()

    def flush() -> None:
        if not window:
            return
        row = LogRow(frames, tlog.updates, float(np.mean(window)), opt.lr, time.perf_counter() - t0)
        tlog.rows.append(row)
        window.clear()
        if on_log:
            on_log(row)
        if ckdir:
            save_checkpoint(params, ckdir / "latest.ckpt", opt, meta={"updates": row.updates, "frames": row.frames})

    scfg = SamplerConfig(patch=cfg.patch, duration=cfg.seq_len, batch=cfg.batch, seed=cfg.seed)
    if cfg.mode == "fcnn":
        tau = cfg.motion_threshold
        if tau is None:
            tau = calibrate_motion_threshold(videos, scfg, seed=cfg.seed)
        scfg = replace(scfg, motion_threshold=tau)

        def draw():
            return sample_fcnn_dataset(videos, scfg, cfg.batch, rng).patches
    else:
        def draw():
            return sample_recurrent_minibatch(videos, scfg, rng)

    source = _Prefetcher(draw, prefetch) if prefetch > 0 else None
    next_batch = source or draw
    try:
        if cfg.mode == "fcnn":
            schedule = PlateauSchedule(patience=cfg.patience)
            while _updates_allowed(cfg, tlog.updates, frames):
                record(train_fcnn_step(params, next_batch(), opt, schedule, f"update {tlog.updates + 1}"))
        else:
            while _updates_allowed(cfg, tlog.updates, frames):
                batch = next_batch()
                if cfg.mode == "stateless":
                    record(train_stateless_step(params, batch, opt, f"update {tlog.updates + 1}"))
                    continue
                n, t_len, h, w = batch.inputs.shape
                state = RecurrentState.zeros(params.config, n, h, w)
                for t in range(t_len):
                    if not _updates_allowed(cfg, tlog.updates, frames):
                        break
                    res, state = train_stateful_step(
                        params, state, batch.inputs[:, t:t + 1], batch.targets[:, t:t + 1], opt,
                        f"update {tlog.updates + 1} (frame {t} of minibatch)")
                    record(res)
        flush()
    except DivergenceError:
        if ckdir:
            save_checkpoint(params, ckdir / "last_good.ckpt", opt, meta={"updates": tlog.updates})
        raise
    finally:
        if source:
            source.close()
    return tlog
