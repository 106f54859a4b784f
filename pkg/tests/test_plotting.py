import numpy as np
import pytest

from otdrmtl.dataset import NO_EVENT, SequenceSample
from otdrmtl.errors import DataError
from otdrmtl.eval import evaluate, oracle_predictions, random_predictions
from otdrmtl.plotting import plot_reports


def _samples(snr_values):
    rng = np.random.default_rng(0)
    out = []
    for i, snr in enumerate(snr_values):
        ev = i % 2 == 1
        out.append(
            SequenceSample(
                rng.random(50), ev, "reflective" if ev else NO_EVENT, 20 if ev else None, 1.0 if ev else None,
                -40.0 if ev else None, 1 if ev else 0, snr, i, 0,
            )
        )
    return out


def test_single_bucket_report_plots(tmp_path):
    s = _samples([12.0] * 40)
    rep = evaluate(random_predictions(s), s, threshold=0.5)
    paths = plot_reports([rep], tmp_path)
    svgs = [p for p in paths if p.suffix == ".svg"]
    assert len(svgs) == 4
    for p in svgs:
        assert p.read_bytes().lstrip().startswith(b"<?xml")
    assert (tmp_path / "detection_vs_snr.csv").read_text().count("\n") == 2


def test_plot_bytes_stable(tmp_path):
    s = _samples(np.linspace(0, 29.9, 120))
    rep = [evaluate(f(s), s, threshold=0.5) for f in (oracle_predictions, random_predictions)]
    a = {p.name: p.read_bytes() for p in plot_reports(rep, tmp_path / "a")}
    b = {p.name: p.read_bytes() for p in plot_reports(rep, tmp_path / "b")}
    assert a == b


def test_no_reports():
    with pytest.raises(DataError):
        plot_reports([], "unused")
