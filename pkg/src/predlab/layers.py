"""Recurrent cells and the residual block, as pure functions of their parameters."""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import ShapeError, Tensor, add, conv2d, hadamard, relu, scale, sigmoid, tanh

GATES = ("i", "f", "o", "g")  # g is the candidate cell value


@dataclass
class Conv:
    weight: Tensor  # (Cout, Cin, 3, 3)
    bias: Tensor  # (Cout,)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)


@dataclass
class CrnnCellParams:
    w_x: Tensor
    b_x: Tensor
    w_h: Tensor
    b_h: Tensor


@dataclass
class ClstmCellParams:
    w_x: dict[str, Tensor]
    b_x: dict[str, Tensor]
    w_h: dict[str, Tensor]
    b_h: dict[str, Tensor]


@dataclass
class ResBlockParams:
    conv1: Conv
    conv2: Conv
    scale: float = 1.0


def conv_param_count(cin: int, cout: int) -> int:
    return cout * cin * 9 + cout


def crnn_param_count(cin: int, ch: int) -> int:
    return conv_param_count(cin, ch) + conv_param_count(ch, ch)


def clstm_param_count(cin: int, ch: int) -> int:
    return 4 * crnn_param_count(cin, ch)


def resblock_param_count(ch: int) -> int:
    return 2 * conv_param_count(ch, ch)


def _check_state(x: Tensor, h: Tensor, ch: int) -> None:
    if x.data.ndim != 4 or h.data.ndim != 4:
        raise ShapeError("cell inputs must be NCHW")
    if x.shape[0] != h.shape[0] or x.shape[2:] != h.shape[2:]:
        raise ShapeError(f"input {x.shape} and state {h.shape} disagree on batch/spatial dims")
    if h.shape[1] != ch:
        raise ShapeError(f"state has {h.shape[1]} channels, cell expects {ch}")


def crnn_step(x: Tensor, h_prev: Tensor, p: CrnnCellParams) -> Tensor:
    """Elman-style update: ``h = tanh(conv(x) + conv(h_prev))``."""
    _check_state(x, h_prev, p.w_h.shape[0])
    return tanh(add(conv2d(x, p.w_x, p.b_x), conv2d(h_prev, p.w_h, p.b_h)))


def clstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: ClstmCellParams) -> tuple[Tensor, Tensor]:
    """Convolutional LSTM update without peephole connections.

    Each gate's pre-activation is an input-path conv plus a hidden-path conv,
    each with its own bias.
    """
    ch = p.w_h["i"].shape[0]
    _check_state(x, h_prev, ch)
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"cell state {c_prev.shape} does not match hidden state {h_prev.shape}")

    def pre(g: str) -> Tensor:
        return add(conv2d(x, p.w_x[g], p.b_x[g]), conv2d(h_prev, p.w_h[g], p.b_h[g]))

    i = sigmoid(pre("i"))
    f = sigmoid(pre("f"))
    o = sigmoid(pre("o"))
    g = tanh(pre("g"))
    c = add(hadamard(f, c_prev), hadamard(i, g))
    h = hadamard(o, tanh(c))
    return h, c


def residual_block(x: Tensor, p: ResBlockParams) -> Tensor:
    """``x + scale * conv2(relu(conv1(x)))``."""
    if x.data.ndim != 4 or x.shape[1] != p.conv1.weight.shape[1]:
        raise ShapeError(f"residual block expects {p.conv1.weight.shape[1]} channels, got {x.shape}")
    branch = p.conv2(relu(p.conv1(x)))
    if p.scale != 1.0:
        branch = scale(branch, p.scale)
    return add(x, branch)
