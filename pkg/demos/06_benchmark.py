"""Per-frame inference time of the three architectures.

The default sizes are the reference ones; on one CPU core the FCNN frame
takes well over a minute, so ``--small`` shrinks every model.

    python3 demos/06_benchmark.py --small
"""

import argparse

from predlab.evaluation import bench_runtime
from predlab.models import FcnnConfig, RecurrentConfig, default_config, init_params


def main(small: bool = False, dims=(184, 184)) -> None:
    if small:
        configs = [RecurrentConfig("crnn", channels=16, num_res_blocks=2),
                   RecurrentConfig("clstm", channels=16, num_res_blocks=2),
                   FcnnConfig(channels=64, num_res_blocks=8)]
    else:
        configs = [default_config(a) for a in ("crnn", "clstm", "fcnn")]
    results = []
    for cfg in configs:
        res = bench_runtime(init_params(cfg, 0), dims, n_frames=3, warmup=1)
        results.append(res)
        print(res.summary_line())
    print(f"hardware: {results[0].hardware}")
    print(f"fcnn / crnn time ratio: {results[2].ms_per_frame / results[0].ms_per_frame:.1f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--small", action="store_true")
    main(ap.parse_args().small)
