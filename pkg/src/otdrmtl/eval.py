"""Metrics, FAR calibration, the classical two-point LSQ detector and report assembly."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import INVERSES, SNR_BUCKET_EDGES, WINDOW, SequenceSample, snr_bucket, to_arrays
from .errors import ConfigError, DataError, SampleSizeError, UndefinedMetricError
from .io_utils import atomic_write_text
from .model import N_CLASSES, MultitaskModel
from .nn._backend import kernels
from .sim import OtdrTrace

DEFAULT_FAR = 0.01
MIN_NEGATIVES = 100

# ------------------------------------------------------------------ metrics


@dataclass
class RocCurve:
    fpr: list[float]
    tpr: list[float]
    thresholds: list[float]
    auc: float

    def to_csv(self) -> str:
        return _xy_csv(self.fpr, self.tpr)


def _as_bool(labels) -> np.ndarray:
    return np.asarray(labels).astype(bool)


def roc_and_auc(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """Threshold sweep over the distinct scores (predict positive when score >= t).

    Tied scores move along a diagonal, so the trapezoid area equals the
    pairwise statistic with ties counted one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _as_bool(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both positive and negative labels")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # last index of each distinct score
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr.tolist(), tpr.tolist(), [math.inf] + s[last].tolist(), auc)


def detection_prob_at_far(pos_scores, neg_scores, far: float = DEFAULT_FAR) -> tuple[float, float]:
    """Threshold with at most ``far`` of negatives at or above it, and the hit rate there.

    The threshold is the smallest negative score ``t`` with
    ``mean(neg >= t) <= far``; if even the largest negative would exceed the
    budget, the next float above it is used.
    """
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    pos = np.asarray(pos_scores, dtype=np.float64)
    if len(neg) < MIN_NEGATIVES:
        raise SampleSizeError(f"need at least {MIN_NEGATIVES} negatives for FAR calibration, got {len(neg)}")
    if not 0.0 < far < 1.0:
        raise ConfigError("far must lie in (0, 1)")
    budget = far * len(neg) * (1 + 1e-12)
    n = len(neg)
    uniq = np.unique(neg)
    at_or_above = n - np.searchsorted(neg, uniq, side="left")
    ok = np.flatnonzero(at_or_above <= budget)
    t = float(uniq[ok[0]]) if len(ok) else float(np.nextafter(neg[-1], np.inf))
    pd = float(np.mean(pos >= t)) if len(pos) else float("nan")
    return t, pd


def regression_metrics(pred, target, mask=None) -> tuple[float, float, float]:
    """``(rmse, mae, smape%)`` over unmasked pairs; a pair with ``p == t == 0`` adds 0 to SMAPE."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DataError(f"prediction {p.shape} vs target {t.shape}")
    m = np.ones(p.shape, bool) if mask is None else np.asarray(mask, bool)
    p, t = p[m], t[m]
    if p.size == 0:
        raise UndefinedMetricError("no unmasked pairs")
    e = p - t
    den = (np.abs(p) + np.abs(t)) / 2.0
    ratio = np.divide(np.abs(e), den, out=np.zeros_like(e), where=den > 0)
    return float(np.sqrt(np.mean(e * e))), float(np.mean(np.abs(e))), float(100.0 * np.mean(ratio))


def classification_metrics(pred_classes, true_classes, n_classes: int = N_CLASSES) -> tuple[float, float]:
    """Accuracy and macro F1; classes absent from the truth are left out of the mean."""
    acc, f1, _ = classification_details(pred_classes, true_classes, n_classes)
    return acc, f1


def classification_details(pred_classes, true_classes, n_classes: int = N_CLASSES):
    p = np.asarray(pred_classes, dtype=int)
    t = np.asarray(true_classes, dtype=int)
    if p.shape != t.shape or p.size == 0:
        raise DataError("need equal-length, non-empty class vectors")
    for a in (p, t):
        if a.min() < 0 or a.max() >= n_classes:
            raise DataError(f"class labels must lie in 0..{n_classes - 1}")
    per = {}
    for c in range(n_classes):
        support = int(np.sum(t == c))
        if support == 0:
            continue
        tp = int(np.sum((p == c) & (t == c)))
        fp = int(np.sum((p == c) & (t != c)))
        fn = support - tp
        per[c] = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
    return float(np.mean(p == t)), float(np.mean(list(per.values()))), per


def macro_ovr_auc(probs: np.ndarray, true_classes) -> tuple[float, dict[int, RocCurve]]:
    """Macro one-vs-rest AUC over classes present with both labels."""
    probs = np.asarray(probs, dtype=np.float64)
    t = np.asarray(true_classes, dtype=int)
    curves = {}
    for c in range(probs.shape[1]):
        y = t == c
        if y.all() or not y.any():
            continue
        curves[c] = roc_and_auc(probs[:, c], y)
    if not curves:
        raise UndefinedMetricError("no class has both positive and negative samples")
    return float(np.mean([cv.auc for cv in curves.values()])), curves


# ------------------------------------------------------------------ classical detector


@dataclass(frozen=True)
class LsqParams:
    """Two-point least-squares detector settings (lengths in samples).

    ``gap`` separates the end of the left fit from the start of the right
    fit so the event's transition (one pulse width) stays out of both. A fit
    counts as clean when its residual RMS is at most ``clean_factor`` times
    the median residual RMS plus ``clean_floor_db``; steps need both fits
    clean, reflection peaks only the left one.
    """

    half_window: int = 16
    gap: int = 7
    threshold_db: float = 0.3
    peak_threshold_db: float = 1.0
    nms: int = 7
    end_loss_db: float = 8.0
    clean_factor: float = 3.0
    clean_floor_db: float = 0.01

    def __post_init__(self) -> None:
        if self.half_window < 3 or self.gap < 0 or self.nms < 0:
            raise ConfigError("half_window must be >= 3; gap and nms must be >= 0")

    @classmethod
    def for_trace(cls, trace: OtdrTrace, **kw) -> "LsqParams":
        w = int(math.ceil(trace.config.pulse_length_m / trace.sample_spacing_m))
        return cls(gap=kw.pop("gap", w), nms=kw.pop("nms", w), **kw)


@dataclass
class ClassicalDetection:
    index: int
    position_m: float
    loss_db: float
    reflective: bool
    peak_db: float
    score: float


def _scores(offset, peak, l_rms, r_rms, params: LsqParams) -> np.ndarray:
    noise = np.nanmedian(np.r_[l_rms, r_rms]) if np.isfinite(l_rms).any() else 0.0
    limit = params.clean_factor * noise + params.clean_floor_db
    left_ok = l_rms <= limit
    step = np.where(left_ok & (r_rms <= limit), offset, -np.inf)
    refl = np.where(left_ok, peak, -np.inf)
    return np.maximum(step, refl)


def lsq_statistics(levels_db: np.ndarray, params: LsqParams):
    """Per-centre ``(offset, peak, score)``.

    ``offset`` is the level drop between the left fit and the right fit
    (which starts ``gap`` samples later, extrapolated back); ``peak`` is the
    largest excess over the left fit inside the gap. NaN/-inf where a fit
    lacks support.
    """
    y = np.asarray(levels_db, dtype=np.float64)
    n = len(y)
    h, g = params.half_window, params.gap
    if n < 2 * h + g:
        raise ConfigError(f"window parameters need {2 * h + g} samples, trace has {n}")
    ll, ls, lr, rl, rs, rr = kernels.lsq_scan(y, h)
    k = np.arange(h, n - h - g + 1)
    offset = np.full(n, np.nan)
    offset[k] = ll[k] - (rl[k + g] - g * rs[k + g])
    peak = np.full(n, np.nan)
    if g > 0:
        win = np.lib.stride_tricks.sliding_window_view(np.r_[y, np.full(g, -np.inf)], g)[:n]
        peak[k] = (win[k] - (ll[k, None] + ls[k, None] * np.arange(g))).max(axis=1)
    else:
        peak[k] = 0.0
    r_rms = np.full(n, np.nan)
    r_rms[k] = rr[k + g]
    score = _scores(offset, peak, lr, r_rms, params)
    score[~np.isfinite(offset)] = -np.inf
    return offset, peak, score


def _fiber_end(y: np.ndarray, params: LsqParams) -> int:
    """First centre after which the median level, both right after the gap and
    one window further on, stays ``end_loss_db`` below the left fit. Medians
    ignore the short excursions of reflections."""
    h, g = params.half_window, params.gap
    n = len(y)
    ll, _, lr = kernels.lsq_scan(y, h)[:3]
    clean = lr <= params.clean_factor * np.nanmedian(lr) + params.clean_floor_db
    med = np.full(n, np.nan)
    if n >= h:
        med[: n - h + 1] = np.median(np.lib.stride_tricks.sliding_window_view(y, h), axis=1)
    k = np.arange(h, n)
    near = np.full(len(k), np.nan)
    far = np.full(len(k), np.nan)
    ok = k + g < n
    near[ok] = med[k[ok] + g]
    ok2 = k + g + h < n
    far[ok2] = med[k[ok2] + g + h]
    drop = (ll[k] - near > params.end_loss_db) & ((ll[k] - far > params.end_loss_db) | ~ok2)
    hits = np.flatnonzero(drop & clean[k])
    return int(k[hits[0]]) if len(hits) else n


def _leading_edge(y, k, gap, peak, offset, fallback) -> int:
    """First sample in the gap after ``k`` rising above half the peak, relative to the level at ``k``.

    Several centres see the same peak inside their gap; this pins the
    reflection to its onset. Falls back when the offset there is undefined.
    """
    seg = y[k : k + max(gap, 1)]
    j = int(np.argmax(seg - seg[0] >= peak / 2.0)) if len(seg) else 0
    at = k + j
    return at if at < len(offset) and np.isfinite(offset[at]) else fallback


def two_point_lsq_detect(trace: OtdrTrace | np.ndarray, params: LsqParams | None = None, spacing_m: float | None = None):
    """Classical event detection on a full trace.

    Candidates score above ``threshold_db``; greedy non-maximum suppression
    keeps the strongest within ``nms`` samples. The fiber end (first drop
    above ``end_loss_db``) and everything after it is not reported.
    """
    if isinstance(trace, OtdrTrace):
        y = trace.samples_db
        params = params or LsqParams.for_trace(trace)
        spacing_m = trace.sample_spacing_m
    else:
        y = np.asarray(trace, dtype=np.float64)
        params = params or LsqParams()
        spacing_m = spacing_m or 1.0
    if len(y) < 200:
        raise ConfigError(f"classical detection needs at least 200 samples, got {len(y)}")
    offset, peak, score = lsq_statistics(y, params)
    stop = _fiber_end(y, params)
    score[max(stop, 0) :] = -np.inf
    cand = np.flatnonzero(score > params.threshold_db)
    cand = cand[np.argsort(-score[cand], kind="mergesort")]
    taken = np.zeros(len(y), bool)
    out = []
    for k in cand:
        if taken[max(0, k - params.nms) : k + params.nms + 1].any():
            continue
        taken[k] = True
        reflective = bool(peak[k] > params.peak_threshold_db)
        at = k
        if reflective and peak[k] >= offset[k]:
            at = _leading_edge(y, k, params.gap, peak[k], offset, k)
        out.append(
            ClassicalDetection(
                index=int(at),
                position_m=float(at * spacing_m),
                loss_db=float(offset[at]),
                reflective=reflective,
                peak_db=float(peak[k]),
                score=float(score[k]),
            )
        )
    out.sort(key=lambda d: d.index)
    return out


def _fit_segments(y: np.ndarray, starts: np.ndarray, ends: np.ndarray):
    """Least-squares lines over ``y[starts[i]:ends[i]]``: (level at start, slope, residual RMS)."""
    idx = np.arange(len(y), dtype=np.float64)
    s0 = np.r_[0.0, np.cumsum(y)]
    s1 = np.r_[0.0, np.cumsum(idx * y)]
    s2 = np.r_[0.0, np.cumsum(y * y)]
    m = (ends - starts).astype(np.float64)
    sy = s0[ends] - s0[starts]
    suy = s1[ends] - s1[starts] - starts * sy
    syy = s2[ends] - s2[starts]
    su = m * (m - 1) / 2.0
    suu = (m - 1) * m * (2 * m - 1) / 6.0
    den = m * suu - su * su
    slope = np.divide(m * suy - su * sy, den, out=np.zeros_like(sy), where=den > 0)
    icpt = (sy - slope * su) / m
    sse = np.maximum(syy - icpt * sy - slope * suy, 0.0)
    rms = np.sqrt(np.divide(sse, m - 2, out=np.zeros_like(sse), where=m > 2))
    return icpt, slope, rms


def lsq_window_scan(rel_db: np.ndarray, params: LsqParams = LsqParams(half_window=8), min_seg: int = 3):
    """Two-point LSQ scan on one short window, shrinking the fits near its edges.

    Returns ``(score, index, offset)`` for the best centre.
    """
    y = np.asarray(rel_db, dtype=np.float64)
    n = len(y)
    k = np.arange(min_seg, n - min_seg + 1)
    l_start = np.maximum(0, k - params.half_window)
    r_start = np.minimum(k + params.gap, n - min_seg)
    r_end = np.minimum(n, r_start + params.half_window)
    li, lsl, lrms = _fit_segments(y, l_start, k)
    ri, rsl, rrms = _fit_segments(y, r_start, r_end)
    left_at_k = li + lsl * (k - l_start)
    offset = left_at_k - (ri - rsl * (r_start - k))
    gap_end = np.maximum(r_start, k + 1)
    peak = np.array(
        [np.max(y[a:b] - (left_at_k[i] + lsl[i] * np.arange(b - a))) for i, (a, b) in enumerate(zip(k, gap_end))]
    )
    score = _scores(offset, peak, lrms, rrms, params)
    j = int(np.argmax(score))
    if peak[j] > params.peak_threshold_db and peak[j] >= offset[j]:
        full = np.full(n, np.nan)
        full[k] = offset
        at = _leading_edge(y, int(k[j]), params.gap, peak[j], full, int(k[j]))
        return float(score[j]), at, float(full[at])
    return float(score[j]), int(k[j]), float(offset[j])


# ------------------------------------------------------------------ predictions


@dataclass
class Predictions:
    """Per-sample outputs of any method, in physical units.

    ``t4_probs``/``t3_refl`` are None for methods that do not estimate them.
    """

    method: str
    t1_score: np.ndarray
    t2_index: np.ndarray
    t3_loss: np.ndarray
    t3_refl: np.ndarray | None
    t4_probs: np.ndarray | None
    threshold: float | None = None

    def __len__(self) -> int:
        return len(self.t1_score)


def model_predictions(model: MultitaskModel, samples: Sequence[SequenceSample], method: str | None = None) -> Predictions:
    x = to_arrays(samples)["x"] if samples else np.zeros((0, model.arch.window, 1))
    _, out = model.infer(x)
    idx = np.clip(np.round(out.t2_pos * (model.arch.window - 1)), 0, model.arch.window - 1)
    return Predictions(method or model.arch.kind, out.t1_prob, idx, out.t3_loss, out.t3_refl, out.t4_probs, model.threshold)


def classical_predictions(
    samples: Sequence[SequenceSample], normalization: str = "symlog", params: LsqParams = LsqParams(half_window=8)
) -> Predictions:
    if normalization not in INVERSES:
        raise ConfigError(f"classical detection needs an invertible normalization, not {normalization!r}")
    inv = INVERSES[normalization]
    n = len(samples)
    score, idx, loss = np.zeros(n), np.zeros(n), np.zeros(n)
    for i, s in enumerate(samples):
        score[i], idx[i], loss[i] = lsq_window_scan(inv(s.values), params)
    return Predictions("TwoPointLSQ", score, idx, loss, None, None)


def oracle_predictions(samples: Sequence[SequenceSample]) -> Predictions:
    """Echo the ground truth; an upper bound for every metric."""
    a = to_arrays(samples)
    probs = np.eye(N_CLASSES)[a["cause_class"]]
    return Predictions(
        "Oracle", a["has_event"].copy(), np.nan_to_num(a["position"]), np.nan_to_num(a["loss_db"]),
        np.nan_to_num(a["reflectance_db"]), probs,
    )


def random_predictions(samples: Sequence[SequenceSample], seed: int = 0) -> Predictions:
    rng = np.random.default_rng(seed)
    n = len(samples)
    probs = rng.dirichlet(np.ones(N_CLASSES), size=n)
    return Predictions(
        "Random", rng.random(n), rng.integers(0, WINDOW, n).astype(float), rng.uniform(0, 6, n), rng.uniform(-50, -15, n), probs
    )


# ------------------------------------------------------------------ report


@dataclass
class BucketMetrics:
    lo: float
    hi: float
    n_pos: int
    n_neg: int
    n_samples: int
    detection_prob: float | None = None
    position_rmse_m: float | None = None
    loss_rmse_db: float | None = None
    refl_rmse_db: float | None = None
    empty: bool = False
    threshold: float | None = None


@dataclass
class EvalReport:
    method: str
    far: float
    threshold: float
    n_test: int
    sample_spacing_m: float
    supports: dict[str, bool]
    t1: dict
    t2: dict
    t3: dict
    t4: dict | None
    buckets: list[BucketMetrics]
    roc_t1: RocCurve | None = None
    roc_per_class: dict[int, RocCurve] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roc_per_class"] = {str(k): asdict(v) for k, v in self.roc_per_class.items()}
        return _clean(d)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        try:
            kw = dict(d)
            kw["buckets"] = [BucketMetrics(**b) for b in d["buckets"]]
            kw["roc_t1"] = RocCurve(**d["roc_t1"]) if d.get("roc_t1") else None
            kw["roc_per_class"] = {int(k): RocCurve(**v) for k, v in d.get("roc_per_class", {}).items()}
            return cls(**kw)
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed report: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def primary_metrics(self) -> dict[str, float | None]:
        """One number per task: T1 accuracy, T2 RMSE [m], T3 mean of the two RMSEs [dB], T4 accuracy."""
        t3 = None
        if self.t3.get("rmse_loss_db") is not None and self.t3.get("rmse_refl_db") is not None:
            t3 = (self.t3["rmse_loss_db"] + self.t3["rmse_refl_db"]) / 2.0
        return {
            "T1": self.t1["accuracy"],
            "T2": self.t2.get("rmse_m"),
            "T3": t3,
            "T4": None if self.t4 is None else self.t4["accuracy"],
        }

    def detection_curve(self) -> tuple[list[float], list[float]]:
        xs, ys = [], []
        for b in self.buckets:
            if b.detection_prob is not None:
                xs.append((b.lo + b.hi) / 2.0)
                ys.append(b.detection_prob)
        return xs, ys

    def bucket_curve(self, attr: str) -> tuple[list[float], list[float]]:
        xs, ys = [], []
        for b in self.buckets:
            v = getattr(b, attr)
            if v is not None:
                xs.append((b.lo + b.hi) / 2.0)
                ys.append(v)
        return xs, ys


def _clean(obj):
    """JSON-safe copy: non-finite floats become None, tuples lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _maybe(fn, *a):
    try:
        return fn(*a)
    except UndefinedMetricError:
        return None


def calibrate_threshold(neg_scores, far: float = DEFAULT_FAR) -> float:
    return detection_prob_at_far([], neg_scores, far)[0]


def evaluate(
    pred: Predictions,
    samples: Sequence[SequenceSample],
    threshold: float | None = None,
    val_neg_scores: Sequence[float] | None = None,
    sample_spacing_m: float = 1.0,
    far: float = DEFAULT_FAR,
    edges: Sequence[float] = SNR_BUCKET_EDGES,
    bucket_neg_scores: Mapping[int, Sequence[float]] | None = None,
) -> EvalReport:
    """Score ``pred`` against the test ``samples``.

    The global threshold (T1 accuracy/F1) is, in order of preference,
    ``threshold``, the FAR-calibrated value from ``val_neg_scores``, the value
    calibrated on all of ``bucket_neg_scores`` pooled, or ``pred.threshold``.
    With ``bucket_neg_scores`` each SNR bucket's detection probability uses
    its own FAR threshold from the negatives of that bucket; otherwise the
    global threshold applies everywhere. Regression metrics use every sample
    that truly carries the target.
    """
    n = len(samples)
    if n == 0:
        raise DataError("cannot evaluate an empty test split")
    if len(pred) != n:
        raise DataError(f"{len(pred)} predictions for {n} samples")
    if threshold is None and val_neg_scores is not None:
        threshold = calibrate_threshold(val_neg_scores, far)
    if threshold is None and bucket_neg_scores:
        threshold = calibrate_threshold(np.concatenate([np.asarray(v, float) for v in bucket_neg_scores.values()]), far)
    if threshold is None:
        threshold = pred.threshold
    if threshold is None:
        raise DataError("no detection threshold: pass one or validation negatives to calibrate")
    a = to_arrays(samples)
    has = a["has_event"].astype(bool)
    snr = a["snr_db"]
    bucket = np.array([snr_bucket(s, edges) for s in snr])
    detected = pred.t1_score >= threshold
    acc1, f1_1, _ = classification_details(detected.astype(int), has.astype(int), 2)
    roc1 = _maybe(roc_and_auc, pred.t1_score, has)
    t1 = {"accuracy": acc1, "f1": f1_1, "auc": None if roc1 is None else roc1.auc}

    pos_mask = np.isfinite(a["position"])
    t2 = {}
    if pos_mask.any():
        r, m_, _ = regression_metrics(pred.t2_index * sample_spacing_m, a["position"] * sample_spacing_m, pos_mask)
        t2 = {"rmse_m": r, "mae_m": m_}
    loss_mask = np.isfinite(a["loss_db"])
    refl_mask = np.isfinite(a["reflectance_db"])
    t3: dict = {}
    if loss_mask.any():
        t3["rmse_loss_db"], _, t3["smape_loss"] = regression_metrics(pred.t3_loss, a["loss_db"], loss_mask)
    if pred.t3_refl is not None and refl_mask.any():
        t3["rmse_refl_db"], _, t3["smape_refl"] = regression_metrics(pred.t3_refl, a["reflectance_db"], refl_mask)
    t4 = None
    per_class_roc: dict[int, RocCurve] = {}
    if pred.t4_probs is not None:
        cls_pred = np.argmax(pred.t4_probs, axis=1)
        acc4, f1_4, per_f1 = classification_details(cls_pred, a["cause_class"])
        auc = _maybe(macro_ovr_auc, pred.t4_probs, a["cause_class"])
        if auc is not None:
            auc, per_class_roc = auc
        t4 = {"accuracy": acc4, "macro_f1": f1_4, "macro_auc": auc, "per_class_f1": {str(k): v for k, v in per_f1.items()}}

    buckets = []
    for bi in range(len(edges) - 1):
        sel = bucket == bi
        bm = BucketMetrics(float(edges[bi]), float(edges[bi + 1]), int((sel & has).sum()), int((sel & ~has).sum()), int(sel.sum()))
        if not sel.any():
            bm.empty = True
        if bucket_neg_scores is None:
            bm.threshold = float(threshold)
        elif len(bucket_neg_scores.get(bi, ())):
            bm.threshold = calibrate_threshold(bucket_neg_scores[bi], far)
        if (sel & has).any() and bm.threshold is not None:
            bm.detection_prob = float(np.mean(pred.t1_score[sel & has] >= bm.threshold))
        m2 = sel & pos_mask
        if m2.any():
            bm.position_rmse_m = regression_metrics(pred.t2_index * sample_spacing_m, a["position"] * sample_spacing_m, m2)[0]
        m3 = sel & loss_mask
        if m3.any():
            bm.loss_rmse_db = regression_metrics(pred.t3_loss, a["loss_db"], m3)[0]
        m4 = sel & refl_mask
        if pred.t3_refl is not None and m4.any():
            bm.refl_rmse_db = regression_metrics(pred.t3_refl, a["reflectance_db"], m4)[0]
        buckets.append(bm)
    supports = {"T1": True, "T2": True, "T3_loss": True, "T3_refl": pred.t3_refl is not None, "T4": pred.t4_probs is not None}
    return EvalReport(
        method=pred.method,
        far=far,
        threshold=float(threshold),
        n_test=n,
        sample_spacing_m=sample_spacing_m,
        supports=supports,
        t1=t1,
        t2=t2,
        t3=t3,
        t4=t4,
        buckets=buckets,
        roc_t1=roc1,
        roc_per_class=per_class_roc,
    )


def negative_scores(pred: Predictions, samples: Sequence[SequenceSample]) -> np.ndarray:
    has = np.array([s.has_event for s in samples], bool)
    return np.asarray(pred.t1_score)[~has]


def bucket_negative_scores(
    pred: Predictions, samples: Sequence[SequenceSample], edges: Sequence[float] = SNR_BUCKET_EDGES
) -> dict[int, np.ndarray]:
    """No-event scores grouped by SNR bucket; buckets without negatives are omitted."""
    score = np.asarray(pred.t1_score)
    groups: dict[int, list[float]] = {}
    for sc, s in zip(score, samples):
        if not s.has_event:
            groups.setdefault(snr_bucket(s.snr_db, edges), []).append(float(sc))
    return {b: np.array(v) for b, v in sorted(groups.items())}


# ------------------------------------------------------------------ exports

TABLE_ROWS = (
    ("T1 accuracy", lambda r: r.t1["accuracy"]),
    ("T1 F1", lambda r: r.t1["f1"]),
    ("T2 RMSE [m]", lambda r: r.t2.get("rmse_m")),
    ("T2 MAE [m]", lambda r: r.t2.get("mae_m")),
    ("T3 RMSE_R [dB]", lambda r: r.t3.get("rmse_refl_db")),
    ("T3 RMSE_L [dB]", lambda r: r.t3.get("rmse_loss_db")),
    ("T3 SMAPE_R [%]", lambda r: r.t3.get("smape_refl")),
    ("T3 SMAPE_L [%]", lambda r: r.t3.get("smape_loss")),
    ("T4 accuracy", lambda r: None if r.t4 is None else r.t4["accuracy"]),
    ("T4 AUC", lambda r: None if r.t4 is None else r.t4["macro_auc"]),
)


def table_csv(reports: Sequence[EvalReport]) -> str:
    """Metric rows by method columns; unsupported cells read ``n/a``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric"] + [r.method for r in reports])
    for name, get in TABLE_ROWS:
        row = [name]
        for r in reports:
            v = get(r)
            row.append("n/a" if v is None else f"{v:.4f}")
        w.writerow(row)
    return buf.getvalue()


def _xy_csv(xs, ys) -> str:
    lines = ["x,y"] + [f"{float(x)!r},{float(y)!r}" for x, y in zip(xs, ys)]
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir: str | Path, stem: str | None = None) -> list[Path]:
    """JSON report plus ``x,y`` CSVs for the ROC, detection-vs-SNR and RMSE-vs-SNR curves."""
    out = Path(out_dir)
    stem = stem or report.method
    files = {f"{stem}.report.json": report.to_json()}
    files[f"{stem}.table.csv"] = table_csv([report])
    files[f"{stem}.detection_vs_snr.csv"] = _xy_csv(*report.detection_curve())
    for attr, name in (("position_rmse_m", "position_rmse"), ("loss_rmse_db", "loss_rmse"), ("refl_rmse_db", "refl_rmse")):
        xs, ys = report.bucket_curve(attr)
        if xs:
            files[f"{stem}.{name}_vs_snr.csv"] = _xy_csv(xs, ys)
    if report.roc_t1 is not None:
        files[f"{stem}.roc_t1.csv"] = report.roc_t1.to_csv()
    for c, cv in sorted(report.roc_per_class.items()):
        files[f"{stem}.roc_class{c}.csv"] = cv.to_csv()
    paths = []
    for name, text in files.items():
        atomic_write_text(out / name, text)
        paths.append(out / name)
    return paths


def read_report(path: str | Path) -> EvalReport:
    path = Path(path)
    if not path.exists():
        raise DataError(f"report not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed report JSON {path}: {exc}") from exc
    try:
        return EvalReport.from_dict(d)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


# ------------------------------------------------------------------ comparisons

MATCH_TOL_RATE = 0.005
MATCH_TOL_REL = 0.02


def matches_or_beats(a: float | None, b: float | None, higher_is_better: bool) -> bool:
    """``a`` is at least as good as ``b`` up to a small tolerance."""
    if a is None or b is None:
        return False
    if higher_is_better:
        return a >= b - MATCH_TOL_RATE
    return a <= b * (1.0 + MATCH_TOL_REL)


def tasks_won(model: EvalReport, baseline: EvalReport) -> list[str]:
    ma, mb = model.primary_metrics(), baseline.primary_metrics()
    better_high = {"T1": True, "T2": False, "T3": False, "T4": True}
    return [t for t in ma if matches_or_beats(ma[t], mb[t], better_high[t])]
