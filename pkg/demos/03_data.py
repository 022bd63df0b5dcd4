"""Synthetic videos, file formats and the two patch samplers.

    python3 demos/03_data.py
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from predlab.data import (
    RecurrentSampler,
    SamplerConfig,
    calibrate_motion_threshold,
    gen_synthetic_video,
    load_sequence,
    sample_fcnn_dataset,
    save_sequence,
    worker_rng,
)


def main(quick: bool = False) -> None:
    videos = [gen_synthetic_video("translate", (64, 64), 60, velocity=(1, 1), seed=0),
              gen_synthetic_video("oscillate", (64, 64), 60, velocity=(0, 2), seed=1),
              gen_synthetic_video("noise", (64, 64), 60, seed=2)]
    for v in videos:
        print(f"{v.source}: {len(v)} frames of {v.dims}, mean level {v.frames.mean():.1f}")

    with tempfile.TemporaryDirectory() as d:
        for target in (Path(d) / "clip.y4m", Path(d) / "frames"):
            back = load_sequence(save_sequence(videos[0], target))
            print(f"saved and reloaded {target.name}: identical = {np.array_equal(back.frames, videos[0].frames)}")

    # recurrent minibatches: targets are the inputs shifted by one frame
    sampler = RecurrentSampler(videos, SamplerConfig(patch=(32, 32), duration=8, batch=4, seed=0))
    b = next(sampler)
    print(f"recurrent batch inputs {b.inputs.shape}, origins {b.origin}")
    print(f"one-frame delay holds: {np.array_equal(b.inputs[:, 1:], b.targets[:, :-1])}")

    # fcnn patches: rejection sampling favours moving content
    cfg = SamplerConfig(patch=(16, 16), duration=9)
    tau = calibrate_motion_threshold(videos, cfg, samples=100 if quick else 500)
    cfg.motion_threshold = tau
    ds = sample_fcnn_dataset(videos, cfg, 16 if quick else 64, worker_rng(0))
    print(f"motion threshold {tau:.2f}: kept {len(ds.patches)} of {ds.attempts} candidates "
          f"({ds.high_motion} high-motion)")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true")
    main(ap.parse_args().quick)
