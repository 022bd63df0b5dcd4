"""Independent reference implementations used as test oracles.

Nothing here imports the engine's ops: convolutions are explicit loops and
gradients are central differences of plain numpy functions.
"""

import numpy as np


def naive_conv2d(x, w, b):
    """Sliding-window 3x3 convolution with zero padding 1, as scalar loops."""
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    out = np.zeros((n, cout, h, wd))
    for i in range(n):
        for o in range(cout):
            for y in range(h):
                for xx in range(wd):
                    acc = b[o]
                    for c in range(cin):
                        for ky in range(3):
                            for kx in range(3):
                                yy, xs = y + ky - 1, xx + kx - 1
                                if 0 <= yy < h and 0 <= xs < wd:
                                    acc += w[o, c, ky, kx] * x[i, c, yy, xs]
                    out[i, o, y, xx] = acc
    return out


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def naive_crnn(x, h, wx, bx, wh, bh):
    return np.tanh(naive_conv2d(x, wx, bx) + naive_conv2d(h, wh, bh))


def naive_clstm(x, h, c, wx, bx, wh, bh):
    """Gates from dicts keyed i, f, o, g."""
    pre = {g: naive_conv2d(x, wx[g], bx[g]) + naive_conv2d(h, wh[g], bh[g]) for g in "ifog"}
    i, f, o, g = sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"]), np.tanh(pre["g"])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def central_diff(f, x, eps=1e-5):
    """Gradient of scalar ``f(x)`` by central differences; ``x`` is not modified."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * eps)
    return g


def max_rel_err(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)
