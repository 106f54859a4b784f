import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from otdrmtl.cli import RESOLVED_NAME, main, resolve_config
from otdrmtl.errors import ConfigError
from otdrmtl.sim import OtdrTrace

SMALL_ARCH = {"lstm_hidden": 6, "conv_filters": 6, "head_hidden": [4, 4, 4, 4]}


def _cfg(tmp: Path, name: str, body: dict) -> str:
    p = tmp / f"{name}.json"
    p.write_text(json.dumps(body))
    return str(p)


def _tree(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A 280-window corpus and a one-epoch model, built through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["dataset", "--count", "280", "--seed", "2", "--out", str(root / "data")]) == 0
    cfg = _cfg(root, "train", {"architecture": SMALL_ARCH, "train": {"batch_size": 32}})
    assert main(["train", "--config", cfg, "--dataset", str(root / "data" / "corpus"), "--max-epochs", "1", "--out", str(root / "run")]) == 0
    return root


# ---------------------------------------------------------------- simulate


def test_simulate_setup1(tmp_path):
    assert main(["simulate", "--preset", "setup1", "--out", str(tmp_path / "s")]) == 0
    tr = OtdrTrace.load(tmp_path / "s" / "trace_0000")
    assert [e.position_m for e in tr.ground_truth.events] == [995.0, 3003.0, 4014.0, 6012.0]
    assert tr.snr_db == 25.0
    resolved = json.loads((tmp_path / "s" / RESOLVED_NAME).read_text())
    assert resolved["preset"] == "setup1" and resolved["seed"] == 0


def test_simulate_count_zero(tmp_path):
    assert main(["simulate", "--count", "0", "--out", str(tmp_path / "s")]) == 0
    assert not (tmp_path / "s").exists()


def test_simulate_repeatable_and_parallel(tmp_path):
    args = ["simulate", "--preset", "none", "--count", "3", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert main(args + ["--out", str(tmp_path / "c"), "--jobs", "2"]) == 0
    a, b, c = (_tree(tmp_path / x) for x in "abc")
    strip = lambda t: {k: v for k, v in t.items() if k != RESOLVED_NAME}  # noqa: E731
    assert strip(a) == strip(b) == strip(c)
    tr = OtdrTrace.load(tmp_path / "a" / "trace_0000")
    assert json.loads((tmp_path / "a" / RESOLVED_NAME).read_text())["preset"] == "none"
    assert [e.position_m for e in tr.ground_truth.events] != [995.0, 3003.0, 4014.0, 6012.0]


def test_unknown_preset_and_key(tmp_path):
    assert main(["simulate", "--preset", "setup9", "--out", str(tmp_path / "s")]) == 2
    assert main(["simulate", "--config", _cfg(tmp_path, "bad", {"colour": "blue"}), "--out", str(tmp_path / "s")]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert main(["simulate", "--config", str(tmp_path / "broken.json")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == 2


def test_resolve_config_layers():
    cfg = resolve_config("dataset", {"corpus": {"count": 10}, "seed": 3}, {"seed": 4, "jobs": None})
    assert cfg["seed"] == 4 and cfg["jobs"] == 1 and cfg["corpus"] == {"count": 10}
    with pytest.raises(ConfigError):
        resolve_config("dataset", {"command": "train"}, {})
    with pytest.raises(ConfigError):
        resolve_config("dataset", {"jobs": 0}, {})


# ---------------------------------------------------------------- dataset / train


def test_dataset_outputs(work):
    names = set(_tree(work / "data"))
    assert names == {"corpus.manifest.json", "corpus.samples.csv", RESOLVED_NAME}


def test_resolved_config_replays(work, tmp_path):
    resolved = str(work / "data" / RESOLVED_NAME)
    assert main(["dataset", "--config", resolved, "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "corpus.samples.csv").read_bytes() == (work / "data" / "corpus.samples.csv").read_bytes()


def test_train_single_epoch_outputs(work):
    lines = (work / "run" / "history.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("1,")
    resolved = json.loads((work / "run" / RESOLVED_NAME).read_text())
    assert resolved["train"]["max_epochs"] == 1 and resolved["train"]["patience"] == 0


def test_train_resume_extends(work, tmp_path):
    import shutil

    run = tmp_path / "run"
    shutil.copytree(work / "run", run)
    cfg = str(work / "run" / RESOLVED_NAME)
    assert main(["train", "--config", cfg, "--max-epochs", "2", "--resume", "--out", str(run)]) == 0
    assert len((run / "history.csv").read_text().splitlines()) == 3


def test_train_missing_dataset(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == 3
    assert main(["train", "--out", str(tmp_path / "r")]) == 2
    assert not (tmp_path / "r").exists()


# ---------------------------------------------------------------- eval / compare


def _eval_cfg(tmp: Path) -> str:
    return _cfg(tmp, "eval", {"calibration_per_bucket": 100})


def test_eval_with_classical(work, tmp_path):
    out = tmp_path / "ev"
    args = ["eval", "--config", _eval_cfg(tmp_path), "--dataset", str(work / "data" / "corpus"), "--model", str(work / "run" / "model_best")]
    assert main(args + ["--classical", "--out", str(out)]) == 0
    names = set(_tree(out))
    assert {"MultitaskBiLstmCnn.report.json", "TwoPointLSQ.report.json", "eval.table.csv"} <= names
    rep = json.loads((out / "TwoPointLSQ.report.json").read_text())
    assert rep["t4"] is None and rep["supports"]["T3_refl"] is False
    assert main(args + ["--out", str(tmp_path / "ev2")]) == 0
    assert (tmp_path / "ev2" / "MultitaskBiLstmCnn.report.json").read_bytes() == (out / "MultitaskBiLstmCnn.report.json").read_bytes()


def test_eval_empty_test_split(work, tmp_path):
    data = tmp_path / "d"
    cfg = _cfg(tmp_path, "ds", {"corpus": {"count": 20, "split_ratios": [0.5, 0.5, 0.0]}})
    assert main(["dataset", "--config", cfg, "--out", str(data)]) == 0
    out = tmp_path / "ev"
    code = main(["eval", "--dataset", str(data / "corpus"), "--model", str(work / "run" / "model_best"), "--out", str(out)])
    assert code == 3 and not out.exists()


def test_eval_missing_model(work, tmp_path):
    code = main(["eval", "--dataset", str(work / "data" / "corpus"), "--model", str(tmp_path / "m"), "--out", str(tmp_path / "e")])
    assert code == 3


def test_compare_and_plot(work, tmp_path):
    cfg = _cfg(tmp_path, "cmp", {"architecture": SMALL_ARCH, "train": {"batch_size": 32}, "calibration_per_bucket": 100})
    out = tmp_path / "cmp"
    args = ["compare", "--config", cfg, "--dataset", str(work / "data" / "corpus"), "--max-epochs", "1", "--classical"]
    assert main(args + ["--out", str(out)]) == 0
    table = (out / "comparison.table.csv").read_text().splitlines()
    assert table[0] == "metric,MultitaskBiLstmCnn,CnnOnly,LstmOnly,BiLstmOnly,TwoPointLSQ"
    assert len(table) == 11
    summary = json.loads((out / "comparison.json").read_text())
    assert set(summary["tasks_matched_or_beaten"]) == {"CnnOnly", "LstmOnly", "BiLstmOnly"}

    reports = [str(out / "reports" / f"{m}.report.json") for m in ("MultitaskBiLstmCnn", "TwoPointLSQ")]
    assert main(["plot", "--reports", *reports, "--out", str(tmp_path / "fig")]) == 0
    svgs = sorted(p.name for p in (tmp_path / "fig").glob("*.svg"))
    assert svgs == sorted(
        ["detection_vs_snr.svg", "position_rmse_vs_snr.svg", "characterization_rmse_vs_snr.svg", "roc.svg", "model_vs_classical.svg"]
    )
    assert main(["plot", "--reports", *reports, "--out", str(tmp_path / "fig2")]) == 0
    strip = lambda t: {k: v for k, v in t.items() if k != RESOLVED_NAME}  # noqa: E731
    assert strip(_tree(tmp_path / "fig")) == strip(_tree(tmp_path / "fig2"))


def test_plot_errors(tmp_path):
    (tmp_path / "bad.report.json").write_text('{"method": "x"}')
    assert main(["plot", "--reports", str(tmp_path / "bad.report.json"), "--out", str(tmp_path / "f")]) == 3
    assert main(["plot", "--out", str(tmp_path / "f")]) == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "otdrmtl.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("simulate", "dataset", "train", "eval", "compare", "plot"):
        assert cmd in out.stdout
