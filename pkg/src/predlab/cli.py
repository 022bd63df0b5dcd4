"""``predlab`` command line: train, eval, bench, gen, params, gradcheck.

Settings resolve as defaults < ``--config`` file (``key = value`` lines) <
flags. Exit status: 0 ok, 2 usage, 3 data/checkpoint error, 4 numeric
divergence, 5 verification failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .data import DataError, gen_synthetic_video, load_sequence, save_sequence
from .evaluation import EvalReport, bench_runtime, copy_last_frame_baseline, emit_report, predict_video
from .gradcheck import gradient_audit
from .models import CheckpointError, FcnnConfig, RecurrentConfig, init_params, load_checkpoint, param_count, \
    default_config, save_checkpoint
from .optim import DivergenceError
from .training import TrainConfig, run_training

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4, 5
GRADCHECK_TOL = 1e-4

log = logging.getLogger("predlab")


class UsageError(Exception):
    pass


def _dims(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError("dimensions must be positive")
    return h, w


def _pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected DY,DX, got {text!r}") from None
    return a, b


def read_config_file(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: $PREDLAB_SEED, else 0)")
    p.add_argument("--config", default=None, help="key = value file applied before flags")
    p.add_argument("--out", default=out_default, help=f"output directory (default: {out_default})")
    p.add_argument("--workers", type=int, default=0,
                   help="minibatches sampled ahead on a background thread; 0 samples inline. "
                        "Results are identical either way (default: 0; used by train)")


def _model_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--model", choices=["crnn", "clstm", "fcnn"], required=required,
                   help="architecture")
    p.add_argument("--channels", type=int, default=None,
                   help="feature channels (default: 64 recurrent, 256 fcnn, the reference model sizes)")
    p.add_argument("--res-blocks", type=int, default=None,
                   help="residual blocks (default: 8 recurrent, 32 fcnn, reference setting)")
    p.add_argument("--res-scale", type=float, default=None,
                   help="residual branch scaling (default: 1.0 recurrent, 0.1 fcnn, reference setting)")
    p.add_argument("--input-frames", type=int, default=None,
                   help="fcnn stacked past frames K (default: 8, reference setting)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predlab", description="Learned next-frame prediction lab.")
    parser.add_argument("--version", action="version", version=f"predlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = {}

    p = parser.commands["train"] = sub.add_parser("train", help="train a model")
    _model_flags(p)
    p.add_argument("--mode", choices=["stateless", "stateful", "fcnn"], default=None,
                   help="recurrent: stateless (window 8) or stateful (window 1, carried state); "
                        "fcnn models only accept fcnn (default: stateful for recurrent, fcnn for fcnn)")
    p.add_argument("--frames", type=int, default=None, help="processed-frame budget")
    p.add_argument("--steps", type=int, default=None, help="update budget (default: 400000 for fcnn, the reference run length)")
    p.add_argument("--lr", type=float, default=None,
                   help="Adam learning rate (default: 1e-5 recurrent, 1e-4 fcnn, reference setting)")
    p.add_argument("--batch", type=int, default=None, help="minibatch size (default: 4 recurrent, 32 fcnn, reference setting)")
    p.add_argument("--seq-len", type=int, default=None,
                   help="frames per sampled sequence (default: 8 stateless, 96 stateful, 9 fcnn, reference setting)")
    p.add_argument("--patch", type=_dims, default=None,
                   help="crop size HxW (default: 184x184 recurrent, 48x48 fcnn, reference setting)")
    p.add_argument("--motion-threshold", type=float, default=None,
                   help="fcnn motion threshold on min consecutive SSD (default: calibrated to ~30%% high-motion)")
    p.add_argument("--patience", type=int, default=6000,
                   help="fcnn plateau patience before halving the lr (default: 6000, reference setting)")
    p.add_argument("--log-every", type=int, default=8, help="updates per log row and checkpoint (default: 8)")
    p.add_argument("--data", action="append", default=[], help="training video (PGM directory or .y4m); repeatable")
    p.add_argument("--synthetic-dims", type=_dims, default=(192, 192),
                   help="size of the generated translate video used when --data is absent (default: 192x192)")
    _common(p, "runs/train")

    p = parser.commands["eval"] = sub.add_parser("eval", help="per-frame PSNR of checkpoints on videos")
    p.add_argument("--checkpoint", action="append", required=True, help="model checkpoint; repeatable")
    p.add_argument("--video", action="append", default=[], help="test video (PGM directory or .y4m); repeatable")
    p.add_argument("--synthetic", choices=["translate", "oscillate", "noise"], default=None,
                   help="evaluate on a generated clip instead of / in addition to --video")
    p.add_argument("--dims", type=_dims, default=(64, 64), help="generated clip size (default: 64x64)")
    p.add_argument("--len", dest="length", type=int, default=40, help="generated clip length (default: 40)")
    _common(p, "runs/eval")

    p = parser.commands["bench"] = sub.add_parser("bench", help="per-frame inference time")
    _model_flags(p)
    p.add_argument("--checkpoint", default=None, help="benchmark this checkpoint instead of a fresh init")
    p.add_argument("--dims", type=_dims, default=(184, 184), help="frame size HxW (default: 184x184)")
    p.add_argument("--frames", type=int, default=5, help="timed frames (default: 5)")
    p.add_argument("--warmup", type=int, default=3, help="untimed warm-up frames (default: 3)")
    _common(p, "runs/bench")

    p = parser.commands["gen"] = sub.add_parser("gen", help="write a synthetic grayscale video")
    p.add_argument("--kind", choices=["translate", "oscillate", "noise"], default="translate")
    p.add_argument("--dims", type=_dims, default=(64, 64), help="frame size HxW (default: 64x64)")
    p.add_argument("--len", dest="length", type=int, default=120, help="number of frames (default: 120)")
    p.add_argument("--velocity", type=_pair, default=(1, 0), help="pixels per frame as DY,DX (default: 1,0)")
    p.add_argument("--smooth", type=float, default=1.0, help="texture blur in pixels (default: 1.0)")
    p.add_argument("--output", default=None, help="PGM directory or .y4m path (default: <out>/video.y4m)")
    _common(p, "runs/gen")

    p = parser.commands["params"] = sub.add_parser("params", help="learnable parameter count")
    _model_flags(p, required=False)
    _common(p, "runs/params")

    p = parser.commands["gradcheck"] = sub.add_parser("gradcheck", help="finite-difference audit of all ops")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds (default: 1)")
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL, help="max relative error (default: 1e-4)")
    _common(p, "runs/gradcheck")
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = read_config_file(args.config)
        except (OSError, UsageError) as e:
            parser.error(str(e))
        sub = parser.commands[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in overrides.items():
            if k not in known:
                parser.error(f"{args.config}: unknown key {k!r}")
            act = known[k]
            defaults[k] = act.type(v) if act.type else v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = int(os.environ.get("PREDLAB_SEED", 0))
    return args


def model_config(args) -> RecurrentConfig | FcnnConfig:
    cfg = default_config(args.model)
    changes = {}
    for flag, field in (("channels", "channels"), ("res_blocks", "num_res_blocks"), ("res_scale", "res_scale")):
        if getattr(args, flag, None) is not None:
            changes[field] = getattr(args, flag)
    if getattr(args, "input_frames", None) is not None:
        if args.model != "fcnn":
            raise UsageError("--input-frames only applies to --model fcnn")
        changes["input_frames"] = args.input_frames
    return type(cfg)(**{**cfg.__dict__, **changes})


def _fmt_lr(lr: float) -> str:
    """Short form used in progress lines: ``1e-5``, ``2.5e-6``, ``0.003``."""
    if lr >= 1e-3 or lr == 0:
        return f"{lr:g}"
    mant, exp = f"{lr:.6e}".split("e")
    return f"{mant.rstrip('0').rstrip('.')}e{int(exp)}"


def _jsonable(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())}


def write_manifest(args, out: Path, start: dt.datetime, artifacts: list, extra: dict | None = None) -> Path:
    config = _jsonable(args)
    manifest = {
        "command": args.command,
        "config": config,
        "config_hash": (extra or {}).pop("config_hash", None)
        or hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16],
        "seed": args.seed,
        "start": start.isoformat(),
        "end": dt.datetime.now(dt.timezone.utc).isoformat(),
        "artifacts": [str(a) for a in artifacts],
        **(extra or {}),
    }
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# commands


def cmd_train(args, out: Path) -> tuple[list, dict]:
    mode = args.mode or ("fcnn" if args.model == "fcnn" else "stateful")
    if (args.model == "fcnn") != (mode == "fcnn"):
        raise UsageError(f"--mode {mode} cannot be used with --model {args.model}")
    overrides = {k: v for k, v in dict(lr=args.lr, batch=args.batch, patch=args.patch).items() if v is not None}
    if args.seq_len is not None:
        overrides["seq_len"] = args.seq_len
        if mode == "stateless":
            overrides["trunc"] = args.seq_len
    steps = args.steps
    if steps is None and args.frames is None:
        steps = 400_000 if mode == "fcnn" else None
        if steps is None:
            raise UsageError("recurrent training needs --frames or --steps")
    tcfg = TrainConfig.for_mode(mode, total_steps=steps, frame_budget=args.frames, seed=args.seed,
                                log_every=args.log_every, motion_threshold=args.motion_threshold,
                                patience=args.patience, **overrides)
    mcfg = model_config(args)
    if args.data:
        videos = [load_sequence(p) for p in args.data]
    else:
        length = max(tcfg.seq_len + 1, 120)
        videos = [gen_synthetic_video("translate", args.synthetic_dims, length, (1, 0), seed=args.seed)]
    params = init_params(mcfg, args.seed)
    print(f"train: model={args.model} mode={mode} lr={_fmt_lr(tcfg.lr)} batch={tcfg.batch} "
          f"seq_len={tcfg.seq_len} patch={tcfg.patch[0]}x{tcfg.patch[1]} params={param_count(params)}")

    def on_log(row):
        print(f"frames={row.frames} updates={row.updates} loss={row.loss:.6g} lr={_fmt_lr(row.lr)}", flush=True)

    tlog = run_training(tcfg, videos, params, checkpoint_dir=out, on_log=on_log, prefetch=max(args.workers, 0))
    final = save_checkpoint(params, out / "final.ckpt", meta={"updates": tlog.updates})
    csv_path = tlog.write_csv(out / "train_log.csv")
    print(f"done: updates={tlog.updates} final_loss={tlog.update_losses[-1]!r}")
    return [final, csv_path, out / "latest.ckpt"], {"updates": tlog.updates,
                                                   "final_loss": tlog.update_losses[-1]}


def cmd_eval(args, out: Path) -> tuple[list, dict]:
    models = [(Path(c).stem, load_checkpoint(c)) for c in args.checkpoint]
    videos = [(Path(v).stem, load_sequence(v)) for v in args.video]
    if args.synthetic:
        videos.append((f"synthetic-{args.synthetic}",
                       gen_synthetic_video(args.synthetic, args.dims, args.length, seed=args.seed)))
    if not videos:
        raise UsageError("give --video and/or --synthetic")
    report = EvalReport(provenance={"checkpoints": args.checkpoint, "seed": args.seed, "config": _jsonable(args)})
    for name, params in models:
        report.params[name] = param_count(params)
    for vname, video in videos:
        report.add(vname, copy_last_frame_baseline(video))
        for mname, params in models:
            s = predict_video(params, video, label=mname).series
            report.add(vname, s)
            print(f"eval: video={vname} model={mname} points={len(s)} mean_psnr={s.mean:.4f}")
    return emit_report(report, out), {"config_hash": report.config_hash()}


def cmd_bench(args, out: Path) -> tuple[list, dict]:
    params = load_checkpoint(args.checkpoint, args.model) if args.checkpoint else init_params(model_config(args), args.seed)
    res = bench_runtime(params, args.dims, n_frames=args.frames, warmup=args.warmup, seed=args.seed)
    print(res.summary_line())
    print(f"hardware: {res.hardware}")
    return [], {"ms_per_frame": res.ms_per_frame, "fps": res.fps, "hardware": res.hardware}


def cmd_gen(args, out: Path) -> tuple[list, dict]:
    video = gen_synthetic_video(args.kind, args.dims, args.length, args.velocity, seed=args.seed, smooth=args.smooth)
    target = Path(args.output) if args.output else out / "video.y4m"
    target.parent.mkdir(parents=True, exist_ok=True)
    path = save_sequence(video, target)
    print(f"gen: wrote {len(video)} frames {args.dims[0]}x{args.dims[1]} to {path}")
    return [path], {}


def cmd_params(args, out: Path) -> tuple[list, dict]:
    archs = [args.model] if args.model else ["crnn", "clstm", "fcnn"]
    counts = {}
    for arch in archs:
        args.model = arch
        counts[arch] = param_count(model_config(args))
        print(counts[arch] if len(archs) == 1 else f"{arch} {counts[arch]}")
    return [], {"params": counts}


def cmd_gradcheck(args, out: Path) -> tuple[list, dict]:
    rows = gradient_audit(range(args.seed, args.seed + args.seeds))
    worst = max(rows, key=lambda r: r.max_rel_err)
    by_case = {}
    for r in rows:
        by_case[r.case] = max(by_case.get(r.case, 0.0), r.max_rel_err)
    for case, err in by_case.items():
        print(f"{case:16s} max_rel_err={err:.3e} {'ok' if err < args.tol else 'FAIL'}")
    passed = worst.max_rel_err < args.tol
    print(f"gradcheck: max_rel_err={worst.max_rel_err:.3e} ({worst.case}/{worst.worst_input}) "
          f"{'PASS' if passed else 'FAIL'}")
    return [], {"max_rel_err": worst.max_rel_err, "passed": passed}


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "gen": cmd_gen,
            "params": cmd_params, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    start = dt.datetime.now(dt.timezone.utc)
    out = Path(args.out)
    code = EXIT_OK
    artifacts, extra = [], {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        artifacts, extra = COMMANDS[args.command](args, out)
        if args.command == "gradcheck" and not extra["passed"]:
            code = EXIT_VERIFY
    except UsageError as e:
        print(f"predlab {args.command}: error: {e}", file=sys.stderr)
        code = EXIT_USAGE
    except (DataError, CheckpointError, OSError) as e:
        print(f"predlab {args.command}: data error: {e}", file=sys.stderr)
        code = EXIT_DATA
    except DivergenceError as e:
        print(f"predlab {args.command}: diverged: {e}", file=sys.stderr)
        code = EXIT_DIVERGED
    extra["exit_code"] = code
    write_manifest(args, out, start, artifacts, extra)
    return code


if __name__ == "__main__":
    sys.exit(main())
