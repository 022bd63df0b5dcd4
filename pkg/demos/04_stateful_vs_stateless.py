"""Stateful (window 1) against stateless (window 8) training on the same frame budget.

Writes the two loss curves to ``<out>/loss_vs_frames.svg``.

    python3 demos/04_stateful_vs_stateless.py --out runs/demo04
"""

import argparse
from pathlib import Path

from predlab.data import gen_synthetic_video
from predlab.evaluation import EvalReport, emit_report
from predlab.models import RecurrentConfig, init_params
from predlab.training import TrainConfig, run_training


def main(out: Path, quick: bool = False) -> None:
    videos = [gen_synthetic_video("translate", (32, 32), 120, velocity=(1, 0), seed=s) for s in range(3)]
    budget = 4 * 96 * (1 if quick else 4)
    model = RecurrentConfig("clstm", channels=4, num_res_blocks=1)
    report = EvalReport(provenance={"demo": "stateful-vs-stateless", "budget": budget})
    for mode, every in (("stateful", 32), ("stateless", 4)):
        cfg = TrainConfig.for_mode(mode, lr=1e-3, patch=(16, 16), frame_budget=budget, seed=0, log_every=every)
        tlog = run_training(cfg, videos, init_params(model, 0))
        report.training[mode] = tlog
        print(f"{mode:9s}: {tlog.updates:4d} updates, final logged loss {tlog.rows[-1].loss:.5f}, "
              f"taped nodes per update {tlog.recorded_nodes[-1]}")
    for p in emit_report(report, out):
        print("wrote", p)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/demo04"))
    ap.add_argument("--quick", action="store_true")
    a = ap.parse_args()
    main(a.out, a.quick)
