"""The three predictors: sizes, shapes and a checkpoint round trip.

    python3 demos/02_models.py
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from predlab.models import (
    FcnnConfig,
    RecurrentConfig,
    RecurrentState,
    default_config,
    fcnn_forward,
    init_params,
    load_checkpoint,
    param_count,
    recurrent_step,
    save_checkpoint,
)
from predlab.tensor import Tensor, no_grad


def main(quick: bool = False) -> None:
    for arch in ("crnn", "clstm", "fcnn"):
        cfg = default_config(arch)
        print(f"{arch:6s} {param_count(cfg):>11,d} parameters  {cfg}")

    # a recurrent model predicts one frame per call and carries its state
    cfg = RecurrentConfig("clstm", channels=8, num_res_blocks=2)
    params = init_params(cfg, seed=0)
    h = w = 32 if quick else 64
    frames = np.random.default_rng(1).uniform(-1, 1, (5, 1, 1, h, w))
    state = RecurrentState.zeros(cfg, 1, h, w)
    with no_grad():
        for t, f in enumerate(frames):
            pred, state = recurrent_step(Tensor(f), state, params)
            print(f"step {t}: prediction {pred.shape}, |h| = {np.abs(state.layers[-1].h.data).mean():.4f}")

    # the FCNN sees K past frames stacked as channels
    fcfg = FcnnConfig(input_frames=8, channels=8, num_res_blocks=2)
    fparams = init_params(fcfg, seed=0)
    with no_grad():
        out = fcnn_forward(Tensor(np.zeros((2, 8, 48, 48))), fparams)
    print(f"fcnn: (2, 8, 48, 48) -> {out.shape}")

    with tempfile.TemporaryDirectory() as d:
        path = save_checkpoint(params, Path(d) / "clstm.ckpt", meta={"note": "demo"})
        back = load_checkpoint(path, cfg)
        same = all(np.array_equal(params[n].data, back[n].data) for n in params.tensors)
        print(f"checkpoint {path.stat().st_size:,d} bytes, round trip exact: {same}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true")
    main(ap.parse_args().quick)
