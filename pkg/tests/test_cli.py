import json
import re
import subprocess
import sys

import pytest

from predlab.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, build_parser, main

TINY = ["--channels", "4", "--res-blocks", "1", "--patch", "16x16", "--synthetic-dims", "32x32"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_params_clstm(capsys, tmp_path):
    code, out, _ = run(capsys, "params", "--model", "clstm", "--out", tmp_path)
    assert code == EXIT_OK and out.strip() == "1037121"


def test_params_all(capsys, tmp_path):
    _, out, _ = run(capsys, "params", "--out", tmp_path)
    assert out.split("\n")[:3] == ["crnn 702849", "clstm 1037121", "fcnn 38376193"]


def test_fcnn_with_stateful_mode_is_usage_error(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--model", "fcnn", "--mode", "stateful", "--steps", "1", "--out", tmp_path)
    assert code == EXIT_USAGE and "cannot be used" in err
    assert json.loads((tmp_path / "manifest.json").read_text())["exit_code"] == EXIT_USAGE


def test_gradcheck_seed_3(capsys, tmp_path):
    code, out, _ = run(capsys, "gradcheck", "--seed", 3, "--out", tmp_path)
    assert code == EXIT_OK
    err = float(re.search(r"gradcheck: max_rel_err=(\S+)", out).group(1))
    assert err < 1e-4 and "PASS" in out


def test_gradcheck_failure_exit_status(capsys, tmp_path):
    code, out, _ = run(capsys, "gradcheck", "--tol", "1e-30", "--out", tmp_path)
    assert code == EXIT_VERIFY and "FAIL" in out


def test_gen_is_byte_identical(capsys, tmp_path):
    for d in ("a", "b"):
        assert run(capsys, "gen", "--kind", "translate", "--dims", "64x64", "--len", 120, "--seed", 1,
                   "--out", tmp_path / d)[0] == EXIT_OK
    a, b = (tmp_path / d / "video.y4m" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes() and a.stat().st_size > 120 * 64 * 64


def test_seed_env_fallback(capsys, tmp_path, monkeypatch):
    run(capsys, "gen", "--len", 3, "--seed", 5, "--out", tmp_path / "flag")
    monkeypatch.setenv("PREDLAB_SEED", "5")
    run(capsys, "gen", "--len", 3, "--out", tmp_path / "env")
    run(capsys, "gen", "--len", 3, "--seed", 6, "--out", tmp_path / "other")
    flag, env, other = ((tmp_path / d / "video.y4m").read_bytes() for d in ("flag", "env", "other"))
    assert flag == env != other


def test_train_replay_is_deterministic(capsys, tmp_path):
    finals = []
    for d in ("a", "b"):
        code, out, _ = run(capsys, "train", "--model", "crnn", "--mode", "stateful", "--frames", 768, "--seed", 7,
                           *TINY, "--log-every", 64, "--out", tmp_path / d)
        assert code == EXIT_OK
        assert "updates=192" in out
        finals.append(re.search(r"final_loss=(\S+)", out).group(1))
        assert (tmp_path / d / "final.ckpt").is_file() and (tmp_path / d / "train_log.csv").is_file()
    assert finals[0] == finals[1]
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()


def test_workers_do_not_change_results(capsys, tmp_path):
    logs = []
    for d, w in (("sync", 0), ("ahead", 2)):
        run(capsys, "train", "--model", "clstm", "--mode", "stateless", "--steps", 3, *TINY,
            "--workers", w, "--out", tmp_path / d)
        logs.append((tmp_path / d / "final.ckpt").read_bytes())
    assert logs[0] == logs[1]


@pytest.mark.parametrize("model,lr", [("crnn", "1e-5"), ("fcnn", "1e-4")])
def test_default_learning_rates_printed(capsys, tmp_path, model, lr):
    extra = ["--batch", 2, "--motion-threshold", 0] if model == "fcnn" else []
    code, out, _ = run(capsys, "train", "--model", model, "--steps", 1, "--channels", 4, "--res-blocks", 1,
                       "--patch", "16x16", "--synthetic-dims", "32x32", *extra, "--out", tmp_path)
    assert code == EXIT_OK
    assert f" lr={lr} " in out.splitlines()[0]


def test_config_file_precedence(capsys, tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text("# sweep\nlr = 0.003\nbatch = 2\n")
    base = ["train", "--model", "crnn", "--steps", 1, *TINY, "--config", cfg]
    _, out, _ = run(capsys, *base, "--out", tmp_path / "a")
    assert " lr=0.003 batch=2 " in out
    _, out, _ = run(capsys, *base, "--lr", "0.01", "--out", tmp_path / "b")
    assert " lr=0.01 batch=2 " in out


def test_config_file_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 1\n")
    with pytest.raises(SystemExit) as e:
        main(["params", "--config", str(cfg)])
    assert e.value.code == EXIT_USAGE


def test_eval_writes_report_and_matching_manifest(capsys, tmp_path):
    run(capsys, "train", "--model", "crnn", "--steps", 2, *TINY, "--out", tmp_path / "t")
    code, out, _ = run(capsys, "eval", "--checkpoint", tmp_path / "t" / "final.ckpt", "--synthetic", "translate",
                       "--dims", "16x16", "--len", 6, "--out", tmp_path / "e")
    assert code == EXIT_OK and "points=5" in out
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    manifest = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert manifest["config_hash"] == report["config_hash"]
    assert manifest["command"] == "eval" and manifest["seed"] == 0
    assert (tmp_path / "e" / "synthetic-translate__final.csv").is_file()


def test_eval_missing_checkpoint(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "nope.ckpt", "--synthetic", "noise",
                       "--out", tmp_path)
    assert code == EXIT_DATA and "not found" in err


def test_bench_summary_line(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--model", "crnn", "--channels", 2, "--res-blocks", 1, "--dims", "16x16",
                       "--frames", 2, "--warmup", 0, "--out", tmp_path)
    assert code == EXIT_OK
    assert re.search(r"^bench: model=crnn h=16 w=16 ms_per_frame=[\d.]+ fps=[\d.]+$", out, re.M)


def test_every_command_writes_a_manifest(capsys, tmp_path):
    for cmd in (["params"], ["gen", "--len", "2"]):
        run(capsys, *cmd, "--out", tmp_path / cmd[0])
        m = json.loads((tmp_path / cmd[0] / "manifest.json").read_text())
        assert m["command"] == cmd[0] and "start" in m and "end" in m and "config" in m


def test_help_lists_reference_defaults():
    text = build_parser().commands["train"].format_help()
    for flag in ("--lr", "--batch", "--seq-len", "--patch", "--patience", "--seed", "--workers", "--config"):
        assert flag in text
    assert "1e-5" in text and "1e-4" in text and "6000" in text


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "predlab", "params", "--model", "crnn", "--out", str(tmp_path)],
                         capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "702849"
