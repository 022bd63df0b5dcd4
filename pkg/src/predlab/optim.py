"""Adam and the halve-on-plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import ContractError, Tensor


class DivergenceError(FloatingPointError):
    """Raised when a loss becomes NaN or infinite."""


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Clears every ``.grad`` afterwards."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {len(missing)} parameter(s), e.g. {missing[0]!r}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.grad = None


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


@dataclass
class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` updates
    without a strict improvement of the best loss.

    The first observed loss seeds the best value and counts as the first
    non-improving update, so a constant stream halves at exactly update
    ``patience``, then every ``patience`` updates after.
    """

    patience: int = 6000
    factor: float = 0.5
    best_loss: float = math.inf
    steps_since_improvement: int = 0
    seeded: bool = False

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience <= 0:
            raise ValueError("patience must be positive")


def plateau_update(schedule: PlateauSchedule, current_loss: float, opt: AdamState) -> float:
    """Feed one loss; returns the (possibly reduced) learning rate."""
    if not math.isfinite(current_loss):
        raise DivergenceError(f"non-finite training loss {current_loss}")
    if not schedule.seeded:
        schedule.seeded = True
        schedule.best_loss = current_loss
        schedule.steps_since_improvement = 1
    elif current_loss < schedule.best_loss:
        schedule.best_loss = current_loss
        schedule.steps_since_improvement = 0
    else:
        schedule.steps_since_improvement += 1

    if schedule.steps_since_improvement >= schedule.patience:
        opt.lr *= schedule.factor
        schedule.steps_since_improvement = 0
    return opt.lr
