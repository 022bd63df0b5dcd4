"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable op records a :class:`Node` when at least one input
requires a gradient. Nodes carry a monotonically increasing sequence number
taken at creation, so sorting the nodes reachable from a loss by that number
yields a valid topological order (a node is always created after its inputs).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64

_nodes_recorded = 0
_grad_enabled = True


def _next_seq() -> int:
    global _nodes_recorded
    _nodes_recorded += 1
    return _nodes_recorded


def recorded_nodes() -> int:
    """Total number of graph nodes recorded so far in this process.

    The difference of two readings counts every op recorded in between,
    whether or not it ends up reachable from a loss.
    """
    return _nodes_recorded


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple["Tensor", ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    seq: int = field(default_factory=_next_seq)


class Tensor:
    """A numpy array plus optional gradient bookkeeping.

    Conv/activation ops expect NCHW 4-D data; biases are 1-D and the loss is
    a 0-d scalar.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return detach(self)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar used by the layers
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return hadamard(self, other)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


def _make(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, backward_fn)
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# convolution


# an im2col buffer up to this size is built in one go (one matmul); beyond
# it the nine kernel offsets are accumulated one matmul at a time
IM2COL_LIMIT_BYTES = 32 * 2**20


def _padded_cnhw(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.zeros((c, n, h + 2, w + 2), dtype=DTYPE)
    xp[:, :, 1:-1, 1:-1] = x.transpose(1, 0, 2, 3)
    return xp


def _use_im2col(x: np.ndarray) -> bool:
    return 9 * x.size * 8 <= IM2COL_LIMIT_BYTES


def _im2col(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    c, n = xp.shape[:2]
    cols = np.empty((3, 3, c, n, h, w), dtype=DTYPE)
    for ky in range(3):
        for kx in range(3):
            cols[ky, kx] = xp[:, :, ky:ky + h, kx:kx + w]
    return cols.reshape(9 * c, n * h * w)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    xp = _padded_cnhw(x)
    if _use_im2col(x):
        wm = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(cout, 9 * cin)
        out = wm @ _im2col(xp, h, wd)
    else:
        wk = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
        out = np.zeros((cout, n * h * wd), dtype=DTYPE)
        for ky in range(3):
            for kx in range(3):
                out += wk[ky, kx] @ xp[:, :, ky:ky + h, kx:kx + wd].reshape(cin, -1)
    out += b[:, None]
    return np.ascontiguousarray(out.reshape(cout, n, h, wd).transpose(1, 0, 2, 3))


def _conv_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
    xp = _padded_cnhw(x)
    gxp = np.zeros_like(xp)
    if _use_im2col(x):
        cols = _im2col(xp, h, wd)
        wm = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(cout, 9 * cin)
        gw = (g2 @ cols.T).reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2)
        gcols = (wm.T @ g2).reshape(3, 3, cin, n, h, wd)
        for ky in range(3):
            for kx in range(3):
                gxp[:, :, ky:ky + h, kx:kx + wd] += gcols[ky, kx]
    else:
        wk = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # (3, 3, Cin, Cout)
        gw = np.empty_like(w)
        for ky in range(3):
            for kx in range(3):
                cols = xp[:, :, ky:ky + h, kx:kx + wd].reshape(cin, -1)
                gw[:, :, ky, kx] = g2 @ cols.T
                gxp[:, :, ky:ky + h, kx:kx + wd] += (wk[ky, kx] @ g2).reshape(cin, n, h, wd)
    gx = np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3))
    return gx, np.ascontiguousarray(gw), g2.sum(axis=1)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (output keeps H and W).

    Small inputs go through a single im2col matmul; wide layers accumulate
    one channel matmul per kernel offset to bound memory.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D NCHW, got {x.shape}")
    if weight.data.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: weight must be (Cout, Cin, 3, 3), got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match Cout={weight.shape[0]}")

    out = _conv_forward(x.data, weight.data, bias.data)

    def backward_fn(g):
        return _conv_backward(g, x.data, weight.data)

    return _make(out, "conv2d", (x, weight, bias), backward_fn)


# --------------------------------------------------------------------------
# elementwise


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


ACTIVATIONS = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "linear": lambda x: x,
}


def apply_activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None
    return fn(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b), lambda g: (g, g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "hadamard")
    ad, bd = a.data, b.data
    return _make(ad * bd, "hadamard", (a, b), lambda g: (g * bd, g * ad))


def binary_op(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "hadamard":
        return hadamard(a, b)
    raise ValueError(f"unknown binary op {kind!r}")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a constant (residual scaling)."""
    c = float(c)
    return _make(x.data * c, "scale", (x,), lambda g: (g * c,))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same_shape(pred, target, "mse_loss")
    if target.requires_grad:
        raise ContractError("mse_loss: target must not require grad")
    diff = pred.data - target.data
    n = diff.size
    return _make(np.asarray(np.mean(diff * diff)), "mse", (pred, target),
                 lambda g: (g * 2.0 * diff / n, None))


def detach(x: Tensor) -> Tensor:
    """Same values, no history; differentiation treats the result as a constant."""
    return Tensor(x.data.copy(), requires_grad=False, name=x.name)


# --------------------------------------------------------------------------
# backward


class GradTape:
    """Recorded operations reachable from an output, in creation order.

    ``entries`` pairs each node with the tensor it produced.
    """

    def __init__(self, entries: list[tuple[Node, Tensor]]):
        self.entries = entries

    @classmethod
    def from_output(cls, out: Tensor) -> "GradTape":
        seen: set[int] = set()
        entries: list[tuple[Node, Tensor]] = []
        stack = [out]
        while stack:
            t = stack.pop()
            node = t.node
            if node is None or id(node) in seen:
                continue
            seen.add(id(node))
            entries.append((node, t))
            stack.extend(node.inputs)
        entries.sort(key=lambda e: e[0].seq)
        return cls(entries)

    @property
    def nodes(self) -> list[Node]:
        return [nd for nd, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def op_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for nd, _ in self.entries:
            counts[nd.op] = counts.get(nd.op, 0) + 1
        return counts


def backward(loss: Tensor) -> GradTape:
    """Populate ``.grad`` on every reachable leaf that requires a gradient.

    Gradients accumulate into existing ``.grad`` arrays; only the optimizer
    clears them. Returns the replayed tape.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss.node is None:
        raise ContractError("backward: loss is not on a recorded graph")

    tape = GradTape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node, out in reversed(tape.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, ig in zip(node.inputs, node.backward_fn(g)):
            if ig is None or not inp.requires_grad:
                continue
            if inp.node is None:
                if inp.grad is None:
                    inp.grad = np.array(ig, dtype=DTYPE, copy=True)
                else:
                    inp.grad += ig
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + ig
            else:
                grads[id(inp)] = ig
    return tape
