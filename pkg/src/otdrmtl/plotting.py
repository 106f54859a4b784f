"""SVG figures from evaluation reports, with the CSV data behind each one.

Output is byte-stable: matplotlib's SVG id salt is pinned and the date
metadata dropped.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402
from .eval import EvalReport  # noqa: E402
from .io_utils import atomic_write_bytes, atomic_write_text  # noqa: E402

CLASSICAL_METHOD = "TwoPointLSQ"
_RC = {"svg.hashsalt": "otdrmtl", "svg.fonttype": "path", "figure.figsize": (6.0, 4.0), "font.size": 9}


def _svg(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def _series_csv(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["series", "x", "y"])
    for name, x, y in rows:
        w.writerow([name, repr(float(x)), repr(float(y))])
    return buf.getvalue()


def _line_plot(series, xlabel: str, ylabel: str, title: str, ylim=None) -> tuple[bytes, str]:
    rows = []
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for name, xs, ys in series:
            ax.plot(xs, ys, marker="o", label=name)
            rows += [(name, x, y) for x, y in zip(xs, ys)]
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if ylim:
            ax.set_ylim(*ylim)
        ax.grid(True, alpha=0.3)
        if series:
            ax.legend(loc="best")
        fig.tight_layout()
        return _svg(fig), _series_csv(rows)


def detection_plot(reports: Sequence[EvalReport]):
    series = [(r.method, *r.detection_curve()) for r in reports]
    return _line_plot(series, "SNR [dB]", "detection probability", "Detection probability at FAR 0.01", (0, 1.02))


def position_plot(reports: Sequence[EvalReport]):
    series = [(r.method, *r.bucket_curve("position_rmse_m")) for r in reports]
    return _line_plot(series, "SNR [dB]", "position RMSE [m]", "Event localization")


def characterization_plot(reports: Sequence[EvalReport]):
    series = []
    for r in reports:
        series.append((f"{r.method} loss", *r.bucket_curve("loss_rmse_db")))
        xs, ys = r.bucket_curve("refl_rmse_db")
        if xs:
            series.append((f"{r.method} reflectance", xs, ys))
    return _line_plot(series, "SNR [dB]", "RMSE [dB]", "Loss and reflectance estimation")


def roc_plot(report: EvalReport):
    """Per-class one-vs-rest ROC curves; the event detection ROC if no classes."""
    curves = [(f"class {c} (AUC {cv.auc:.3f})", cv) for c, cv in sorted(report.roc_per_class.items())]
    if not curves and report.roc_t1 is not None:
        curves = [(f"event detection (AUC {report.roc_t1.auc:.3f})", report.roc_t1)]
    series = [(name, cv.fpr, cv.tpr) for name, cv in curves]
    rows = []
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for name, xs, ys in series:
            ax.plot(xs, ys, label=name)
            rows += [(name, x, y) for x, y in zip(xs, ys)]
        ax.plot([0, 1], [0, 1], linestyle=":", color="grey")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title(f"ROC, {report.method}")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        if series:
            ax.legend(loc="lower right", fontsize=7)
        fig.tight_layout()
        return _svg(fig), _series_csv(rows)


def overlay_plot(model: EvalReport, classical: EvalReport):
    series = [(model.method, *model.detection_curve()), (classical.method, *classical.detection_curve())]
    return _line_plot(series, "SNR [dB]", "detection probability", "Neural vs two-point/LSQ detector", (0, 1.02))


def plot_reports(reports: Sequence[EvalReport], out_dir: str | Path) -> list[Path]:
    """Write every figure the reports support. The first non-classical
    report drives the ROC figure and the overlay."""
    if not reports:
        raise DataError("no reports to plot")
    out = Path(out_dir)
    neural = [r for r in reports if r.method != CLASSICAL_METHOD]
    classical = [r for r in reports if r.method == CLASSICAL_METHOD]
    figures = {
        "detection_vs_snr": detection_plot(reports),
        "position_rmse_vs_snr": position_plot(reports),
        "characterization_rmse_vs_snr": characterization_plot(reports),
    }
    lead = neural[0] if neural else reports[0]
    figures["roc"] = roc_plot(lead)
    if neural and classical:
        figures["model_vs_classical"] = overlay_plot(neural[0], classical[0])
    written = []
    for stem, (svg, data) in figures.items():
        atomic_write_bytes(out / f"{stem}.svg", svg)
        atomic_write_text(out / f"{stem}.csv", data)
        written += [out / f"{stem}.svg", out / f"{stem}.csv"]
    return written
