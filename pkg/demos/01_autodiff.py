"""Reverse-mode differentiation on a tiny convolution, checked by finite differences.

    python3 demos/01_autodiff.py
"""

import argparse

import numpy as np

from predlab import tensor as T
from predlab.gradcheck import gradient_audit


def main(quick: bool = False) -> None:
    rng = np.random.default_rng(0)
    x = T.Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.3, requires_grad=True)
    b = T.Tensor(np.zeros(3), requires_grad=True)
    target = T.Tensor(np.zeros((1, 3, 5, 5)))

    # forward: conv -> tanh -> mse; every op lands on the tape
    loss = T.mse_loss(T.tanh(T.conv2d(x, w, b)), target)
    tape = T.backward(loss)
    print(f"loss = {loss.item():.6f}")
    print(f"tape: {len(tape)} nodes, ops {tape.op_counts()}")
    print(f"|dL/dw| = {np.linalg.norm(w.grad):.6f}, |dL/dx| = {np.linalg.norm(x.grad):.6f}")

    # nudge one weight and compare with the analytic slope
    eps, idx = 1e-6, (1, 0, 2, 1)
    w.data[idx] += eps
    with T.no_grad():
        bumped = T.mse_loss(T.tanh(T.conv2d(x, w, b)), target).item()
    print(f"slope at w{idx}: analytic {w.grad[idx]:.8f}, one-sided difference {(bumped - loss.item()) / eps:.8f}")

    seeds = range(2) if quick else range(5)
    rows = gradient_audit(seeds)
    for case in dict.fromkeys(r.case for r in rows):
        err = max(r.max_rel_err for r in rows if r.case == case)
        print(f"  {case:15s} worst relative error {err:.1e}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true")
    main(ap.parse_args().quick)
