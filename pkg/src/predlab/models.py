"""The recurrent (CRNN / CLSTM) and fully convolutional next-frame predictors.

Parameters live in a flat, ordered ``name -> Tensor`` map. Layer views
(:class:`CrnnCellParams` etc.) are rebuilt from that map on every forward
pass, so the map is the single source of truth for optimisation and
serialisation.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from .layers import (
    GATES,
    ClstmCellParams,
    Conv,
    CrnnCellParams,
    ResBlockParams,
    clstm_step,
    crnn_step,
    residual_block,
)
from .optim import AdamState
from .tensor import DTYPE, ShapeError, Tensor, add, conv2d, detach, tanh


@dataclass(frozen=True)
class RecurrentConfig:
    cell_kind: str = "crnn"
    channels: int = 64
    num_res_blocks: int = 8
    res_scale: float = 1.0
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.cell_kind not in ("crnn", "clstm"):
            raise ValueError(f"cell_kind must be 'crnn' or 'clstm', got {self.cell_kind!r}")
        if self.channels <= 0 or self.num_res_blocks < 0:
            raise ValueError("channels must be > 0 and num_res_blocks >= 0")

    @property
    def arch(self) -> str:
        return self.cell_kind


@dataclass(frozen=True)
class FcnnConfig:
    input_frames: int = 8
    channels: int = 256
    num_res_blocks: int = 32
    res_scale: float = 0.1
    out_channels: int = 1

    def __post_init__(self):
        if self.input_frames < 1:
            raise ValueError("input_frames must be >= 1")
        if not 0 < self.res_scale <= 1:
            raise ValueError("res_scale must lie in (0, 1]")
        if self.channels <= 0 or self.num_res_blocks < 0:
            raise ValueError("channels must be > 0 and num_res_blocks >= 0")

    @property
    def arch(self) -> str:
        return "fcnn"


Config = Union[RecurrentConfig, FcnnConfig]


def config_from_dict(arch: str, d: dict) -> Config:
    if arch == "fcnn":
        return FcnnConfig(**d)
    return RecurrentConfig(**d)


def default_config(arch: str) -> Config:
    if arch == "fcnn":
        return FcnnConfig()
    if arch in ("crnn", "clstm"):
        return RecurrentConfig(cell_kind=arch)
    raise ValueError(f"unknown architecture {arch!r}")


# --------------------------------------------------------------------------
# shapes


def _conv_shapes(prefix: str, cin: int, cout: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.weight", (cout, cin, 3, 3)), (f"{prefix}.bias", (cout,))]


def _cell_shapes(prefix: str, kind: str, cin: int, ch: int):
    suffixes = [""] if kind == "crnn" else [f".{g}" for g in GATES]
    out = []
    for s in suffixes:
        out += [
            (f"{prefix}.w_x{s}", (ch, cin, 3, 3)),
            (f"{prefix}.b_x{s}", (ch,)),
            (f"{prefix}.w_h{s}", (ch, ch, 3, 3)),
            (f"{prefix}.b_h{s}", (ch,)),
        ]
    return out


def param_shapes(cfg: Config) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list fully determined by the config."""
    c = cfg.channels
    shapes: list[tuple[str, tuple[int, ...]]] = []
    if isinstance(cfg, RecurrentConfig):
        shapes += _cell_shapes("rnn1", cfg.cell_kind, cfg.in_channels, c)
        shapes += _cell_shapes("rnn2", cfg.cell_kind, c, c)
        for k in range(cfg.num_res_blocks):
            shapes += _conv_shapes(f"res{k}.conv1", c, c) + _conv_shapes(f"res{k}.conv2", c, c)
        shapes += _conv_shapes("out", c, cfg.out_channels)
    else:
        shapes += _conv_shapes("head", cfg.input_frames, c)
        for k in range(cfg.num_res_blocks):
            shapes += _conv_shapes(f"res{k}.conv1", c, c) + _conv_shapes(f"res{k}.conv2", c, c)
        shapes += _conv_shapes("body_end", c, c)
        shapes += _conv_shapes("tail", c, cfg.out_channels)
    return shapes


@dataclass
class ModelParams:
    arch: str
    config: Config
    tensors: dict[str, Tensor]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self) -> dict[str, Tensor]:
        return self.tensors


def param_count(params: ModelParams | Config) -> int:
    """Number of learnable scalars. Accepts params or a bare config (no allocation)."""
    if isinstance(params, ModelParams):
        return sum(t.size for t in params.tensors.values())
    return sum(int(np.prod(s)) for _, s in param_shapes(params))


def init_params(cfg: Config, seed: int = 0) -> ModelParams:
    """He-uniform (fan-in) conv weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg):
        if len(shape) == 4:
            fan_in = shape[1] * 9
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape, dtype=DTYPE)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(cfg.arch, cfg, tensors)


def zero_params(cfg: Config) -> ModelParams:
    tensors = {n: Tensor(np.zeros(s), requires_grad=True, name=n) for n, s in param_shapes(cfg)}
    return ModelParams(cfg.arch, cfg, tensors)


# --------------------------------------------------------------------------
# layer views


def _conv(p: dict[str, Tensor], prefix: str) -> Conv:
    return Conv(p[f"{prefix}.weight"], p[f"{prefix}.bias"])


def _res_blocks(p: dict[str, Tensor], n: int, res_scale: float) -> list[ResBlockParams]:
    return [ResBlockParams(_conv(p, f"res{k}.conv1"), _conv(p, f"res{k}.conv2"), res_scale) for k in range(n)]


def _crnn_cell(p: dict[str, Tensor], prefix: str) -> CrnnCellParams:
    return CrnnCellParams(p[f"{prefix}.w_x"], p[f"{prefix}.b_x"], p[f"{prefix}.w_h"], p[f"{prefix}.b_h"])


def _clstm_cell(p: dict[str, Tensor], prefix: str) -> ClstmCellParams:
    return ClstmCellParams(
        {g: p[f"{prefix}.w_x.{g}"] for g in GATES},
        {g: p[f"{prefix}.b_x.{g}"] for g in GATES},
        {g: p[f"{prefix}.w_h.{g}"] for g in GATES},
        {g: p[f"{prefix}.b_h.{g}"] for g in GATES},
    )


# --------------------------------------------------------------------------
# recurrent model


@dataclass
class LayerState:
    h: Tensor
    c: Tensor | None = None


@dataclass
class RecurrentState:
    layers: list[LayerState] = field(default_factory=list)

    @classmethod
    def zeros(cls, cfg: RecurrentConfig, n: int, h: int, w: int) -> "RecurrentState":
        shape = (n, cfg.channels, h, w)
        clstm = cfg.cell_kind == "clstm"
        return cls([
            LayerState(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)) if clstm else None)
            for _ in range(2)
        ])

    def detach(self) -> "RecurrentState":
        return RecurrentState([
            LayerState(detach(s.h), None if s.c is None else detach(s.c)) for s in self.layers
        ])

    @property
    def spatial(self) -> tuple[int, int]:
        return self.layers[0].h.shape[2:]


def recurrent_step(frame: Tensor, state: RecurrentState, params: ModelParams,
                   cfg: RecurrentConfig | None = None) -> tuple[Tensor, RecurrentState]:
    """Consume one frame, return the next-frame prediction and updated state."""
    cfg = cfg or params.config
    if params.arch != cfg.cell_kind:
        raise ValueError(f"params are {params.arch!r}, config is {cfg.cell_kind!r}")
    if frame.data.ndim != 4 or frame.shape[1] != cfg.in_channels:
        raise ShapeError(f"frame must be (N, {cfg.in_channels}, H, W), got {frame.shape}")
    if len(state.layers) != 2:
        raise ShapeError("recurrent state must hold two layers")
    if state.layers[0].h.shape[0] != frame.shape[0] or state.spatial != frame.shape[2:]:
        raise ShapeError(f"state {state.layers[0].h.shape} does not match frame {frame.shape}")

    p = params.tensors
    x = frame
    new_layers = []
    for k, layer in enumerate(state.layers, start=1):
        if cfg.cell_kind == "crnn":
            h = crnn_step(x, layer.h, _crnn_cell(p, f"rnn{k}"))
            new_layers.append(LayerState(h))
        else:
            if layer.c is None:
                raise ShapeError("CLSTM state is missing its cell tensor")
            h, c = clstm_step(x, layer.h, layer.c, _clstm_cell(p, f"rnn{k}"))
            new_layers.append(LayerState(h, c))
        x = h

    for block in _res_blocks(p, cfg.num_res_blocks, cfg.res_scale):
        x = residual_block(x, block)
    pred = _conv(p, "out")(x)
    return pred, RecurrentState(new_layers)


# --------------------------------------------------------------------------
# FCNN


def fcnn_forward(frames: Tensor, params: ModelParams, cfg: FcnnConfig | None = None) -> Tensor:
    """K stacked frames -> next frame in [-1, 1]."""
    cfg = cfg or params.config
    if frames.data.ndim != 4 or frames.shape[1] != cfg.input_frames:
        raise ShapeError(f"expected (N, {cfg.input_frames}, H, W) input, got {frames.shape}")
    p = params.tensors
    head = _conv(p, "head")(frames)
    x = head
    for block in _res_blocks(p, cfg.num_res_blocks, cfg.res_scale):
        x = residual_block(x, block)
    x = add(_conv(p, "body_end")(x), head)
    return tanh(_conv(p, "tail")(x))


# --------------------------------------------------------------------------
# checkpoints
#
# layout: MAGIC (8 bytes) | version u32 LE | header length u64 LE | header
# (UTF-8 JSON) | payload. The header lists every tensor with its shape and
# byte offset into the payload; payloads are raw little-endian float64.

MAGIC = b"PRDLBCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: AdamState | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(params: ModelParams, path, optimizer: AdamState | None = None,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    arrays: list[tuple[str, np.ndarray]] = [(n, t.data) for n, t in params.tensors.items()]
    opt_header = None
    if optimizer is not None:
        opt_header = {k: getattr(optimizer, k) for k in ("lr", "beta1", "beta2", "eps", "t")}
        for n in optimizer.m:
            arrays.append((f"adam.m/{n}", optimizer.m[n]))
            arrays.append((f"adam.v/{n}", optimizer.v[n]))

    directory, offset = [], 0
    for name, a in arrays:
        directory.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    header = json.dumps({
        "arch": params.arch,
        "config": dataclasses.asdict(params.config),
        "tensors": directory,
        "optimizer": opt_header,
        "meta": meta or {},
    }, sort_keys=True).encode()

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a predlab checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen])
    payload = memoryview(raw)[start + hlen:]

    def array(entry) -> np.ndarray:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        end = entry["offset"] + 8 * n
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        return np.frombuffer(payload[entry["offset"]:end], dtype="<f8").astype(DTYPE).reshape(shape)

    arch = header["arch"]
    cfg = config_from_dict(arch, header["config"])
    expected = dict(param_shapes(cfg))
    tensors, m, v = {}, {}, {}
    for entry in header["tensors"]:
        name = entry["name"]
        if name.startswith("adam.m/"):
            m[name[7:]] = array(entry)
        elif name.startswith("adam.v/"):
            v[name[7:]] = array(entry)
        else:
            if name not in expected or tuple(entry["shape"]) != expected[name]:
                raise CheckpointError(f"{path}: tensor {name} shape {entry['shape']} does not fit {arch} config")
            tensors[name] = Tensor(array(entry), requires_grad=True, name=name)
    if set(tensors) != set(expected):
        raise CheckpointError(f"{path}: missing tensors {sorted(set(expected) - set(tensors))[:3]}")
    tensors = {n: tensors[n] for n in expected}

    opt = None
    if header.get("optimizer"):
        opt = AdamState(**header["optimizer"], m=m, v=v)
    return Checkpoint(ModelParams(arch, cfg, tensors), opt, header.get("meta", {}))


def load_checkpoint(path, expected: Config | str | None = None) -> ModelParams:
    """Load parameters; if ``expected`` is given, the architecture (and for a
    config, every hyperparameter) must match."""
    ck = read_checkpoint(path)
    if expected is not None:
        want = expected if isinstance(expected, str) else expected.arch
        if ck.params.arch != want:
            raise CheckpointError(f"architecture mismatch: checkpoint is {ck.params.arch!r}, expected {want!r}")
        if not isinstance(expected, str) and ck.params.config != expected:
            raise CheckpointError(f"config mismatch: checkpoint has {ck.params.config}, expected {expected}")
    return ck.params
