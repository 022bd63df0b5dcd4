"""Train a small CRNN on a moving texture and score it against copying the last frame.

    python3 demos/05_train_and_evaluate.py --out runs/demo05
"""

import argparse
from pathlib import Path

from predlab.data import gen_synthetic_video
from predlab.evaluation import EvalReport, copy_last_frame_baseline, emit_report, predict_video
from predlab.models import RecurrentConfig, init_params, param_count, save_checkpoint
from predlab.training import TrainConfig, run_training


def main(out: Path, quick: bool = False) -> None:
    train = gen_synthetic_video("translate", (64, 64), 200, velocity=(1, 0), seed=1)
    test = gen_synthetic_video("translate", (64, 64), 40, velocity=(1, 0), seed=2)
    params = init_params(RecurrentConfig("crnn", channels=8, num_res_blocks=2), seed=0)
    steps = 200 if quick else 2500
    cfg = TrainConfig.for_mode("stateful", lr=1e-3, patch=(32, 32), total_steps=steps, log_every=steps // 5)
    tlog = run_training(cfg, [train], params,
                        on_log=lambda r: print(f"  {r.updates:5d} updates  loss {r.loss:.5f}  {r.seconds:.0f} s"))

    model = predict_video(params, test, label="crnn").series
    base = copy_last_frame_baseline(test)
    print(f"{param_count(params):,d} parameters; held-out PSNR {model.mean:.2f} dB, "
          f"copy-last-frame {base.mean:.2f} dB")

    report = EvalReport(provenance={"demo": "train-and-evaluate", "steps": steps}, params={"crnn": param_count(params)})
    report.add("held-out translate", base)
    report.add("held-out translate", model)
    report.training["stateful"] = tlog
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "crnn.ckpt", meta={"updates": tlog.updates})
    for p in emit_report(report, out):
        print("wrote", p)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/demo05"))
    ap.add_argument("--quick", action="store_true")
    a = ap.parse_args()
    main(a.out, a.quick)
