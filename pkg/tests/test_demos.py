import importlib.util
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


def load(name):
    spec = importlib.util.spec_from_file_location(name, DEMOS / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@pytest.mark.parametrize("name", ["01_autodiff", "02_models", "03_data"])
def test_quick_demo_runs(name, capsys):
    load(name).main(quick=True)
    assert capsys.readouterr().out


@pytest.mark.parametrize("name", ["04_stateful_vs_stateless", "05_train_and_evaluate"])
def test_demo_writes_report(name, tmp_path, capsys):
    load(name).main(tmp_path, quick=True)
    assert (tmp_path / "report.json").is_file() and (tmp_path / "training_loss.svg").is_file()


def test_benchmark_demo(capsys):
    load("06_benchmark").main(small=True, dims=(24, 24))
    assert capsys.readouterr().out.count("bench: model=") == 3
