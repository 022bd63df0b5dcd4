"""Finite-difference audit of every differentiable op and layer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .layers import GATES, ClstmCellParams, Conv, CrnnCellParams, ResBlockParams, clstm_step, crnn_step, \
    residual_block


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute discrepancy relative to the largest gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_gradient(loss_fn: Callable[[], T.Tensor], x: T.Tensor, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_fn().item()
            flat[i] = orig - eps
            fm = loss_fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
    return g


def check_gradients(loss_fn: Callable[[], T.Tensor], inputs: dict[str, T.Tensor],
                    eps: float = 1e-5) -> dict[str, float]:
    """Relative error of the analytic gradient for each named input."""
    for t in inputs.values():
        t.requires_grad = True
        t.grad = None
    T.backward(loss_fn())
    return {name: relative_error(t.grad, numeric_gradient(loss_fn, t, eps)) for name, t in inputs.items()}


# --------------------------------------------------------------------------
# audit cases; each returns (loss_fn, inputs) for a seed


def _rand(rng, *shape, away_from_zero=False):
    a = rng.uniform(-1, 1, shape)
    if away_from_zero:
        a = np.where(np.abs(a) < 0.05, a + np.sign(a + 1e-12) * 0.05, a)
    return T.Tensor(a)


def _conv_params(rng, cin, cout):
    return Conv(_rand(rng, cout, cin, 3, 3), _rand(rng, cout))


def _case_conv2d(rng):
    x, w, b = _rand(rng, 2, 3, 5, 6), _rand(rng, 4, 3, 3, 3), _rand(rng, 4)
    tgt = _rand(rng, 2, 4, 5, 6)
    return lambda: T.mse_loss(T.conv2d(x, w, b), tgt), {"x": x, "w": w, "b": b}


def _unary(kind):
    def case(rng):
        x = _rand(rng, 2, 4, 6, 6, away_from_zero=kind == "relu")
        tgt = _rand(rng, 2, 4, 6, 6)
        return lambda: T.mse_loss(T.apply_activation(x, kind), tgt), {"x": x}
    return case


def _binary(kind):
    def case(rng):
        a, b, tgt = _rand(rng, 2, 4, 6, 6), _rand(rng, 2, 4, 6, 6), _rand(rng, 2, 4, 6, 6)
        return lambda: T.mse_loss(T.binary_op(a, b, kind), tgt), {"a": a, "b": b}
    return case


def _case_scale(rng):
    x, tgt = _rand(rng, 2, 4, 6, 6), _rand(rng, 2, 4, 6, 6)
    return lambda: T.mse_loss(T.scale(x, 0.37), tgt), {"x": x}


def _case_mse(rng):
    p, tgt = _rand(rng, 2, 4, 6, 6), _rand(rng, 2, 4, 6, 6)
    return lambda: T.mse_loss(p, tgt), {"pred": p}


def _case_crnn(rng):
    x, h = _rand(rng, 2, 2, 5, 5), _rand(rng, 2, 4, 5, 5)
    p = CrnnCellParams(_rand(rng, 4, 2, 3, 3), _rand(rng, 4), _rand(rng, 4, 4, 3, 3), _rand(rng, 4))
    tgt = _rand(rng, 2, 4, 5, 5)
    inputs = {"x": x, "h": h, "w_x": p.w_x, "b_x": p.b_x, "w_h": p.w_h, "b_h": p.b_h}
    return lambda: T.mse_loss(crnn_step(x, h, p), tgt), inputs


def _case_clstm(rng):
    x, h, c = _rand(rng, 2, 2, 4, 4), _rand(rng, 2, 3, 4, 4), _rand(rng, 2, 3, 4, 4)
    p = ClstmCellParams(
        {g: _rand(rng, 3, 2, 3, 3) for g in GATES}, {g: _rand(rng, 3) for g in GATES},
        {g: _rand(rng, 3, 3, 3, 3) for g in GATES}, {g: _rand(rng, 3) for g in GATES},
    )
    th, tc = _rand(rng, 2, 3, 4, 4), _rand(rng, 2, 3, 4, 4)

    def loss():
        hn, cn = clstm_step(x, h, c, p)
        return T.add(T.mse_loss(hn, th), T.mse_loss(cn, tc))

    inputs = {"x": x, "h": h, "c": c}
    for g in GATES:
        inputs.update({f"w_x.{g}": p.w_x[g], f"b_x.{g}": p.b_x[g], f"w_h.{g}": p.w_h[g], f"b_h.{g}": p.b_h[g]})
    return loss, inputs


def _case_resblock(rng):
    x = _rand(rng, 2, 4, 5, 5)
    p = ResBlockParams(_conv_params(rng, 4, 4), _conv_params(rng, 4, 4), scale=0.1)
    tgt = _rand(rng, 2, 4, 5, 5)
    inputs = {"x": x, "conv1.w": p.conv1.weight, "conv1.b": p.conv1.bias,
              "conv2.w": p.conv2.weight, "conv2.b": p.conv2.bias}
    return lambda: T.mse_loss(residual_block(x, p), tgt), inputs


CASES: dict[str, Callable] = {
    "conv2d": _case_conv2d,
    "relu": _unary("relu"),
    "tanh": _unary("tanh"),
    "sigmoid": _unary("sigmoid"),
    "add": _binary("add"),
    "hadamard": _binary("hadamard"),
    "scale": _case_scale,
    "mse_loss": _case_mse,
    "crnn_step": _case_crnn,
    "clstm_step": _case_clstm,
    "residual_block": _case_resblock,
}


@dataclass
class AuditRow:
    case: str
    seed: int
    max_rel_err: float
    worst_input: str


def gradient_audit(seeds, cases: list[str] | None = None, eps: float = 1e-5) -> list[AuditRow]:
    rows = []
    for name in cases or list(CASES):
        for seed in seeds:
            loss_fn, inputs = CASES[name](np.random.default_rng([seed, len(name)]))
            errs = check_gradients(loss_fn, inputs, eps)
            worst = max(errs, key=errs.get)
            rows.append(AuditRow(name, seed, errs[worst], worst))
    return rows
