"""Acceptance criteria 1-10.

Each test appends one ``PASS/FAIL criterion N: ...`` line to the session log
(printed in the terminal summary) before asserting. Criteria 3-7 share one
desk-scale run: the CLI builds the 6000-window corpus at seed 0 and then
trains and evaluates all four architectures plus the classical detector.
That run takes roughly a quarter of an hour on one core.
"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from otdrmtl.cli import main
from otdrmtl.dataset import CorpusSpec, Dataset, build_corpus
from otdrmtl.eval import read_report, regression_metrics, roc_and_auc, tasks_won
from otdrmtl.model import Architecture
from otdrmtl.nn import (
    bce,
    bilstm_backward,
    bilstm_forward,
    conv1d_backward,
    conv1d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    lstm_backward,
    lstm_forward,
    maxpool1d_backward,
    maxpool1d_forward,
    mse,
)
from otdrmtl.nn.gradcheck import numeric_grad, rel_error
from otdrmtl.sim import (
    FiberLink,
    LinkRandomizationSpec,
    OtdrConfig,
    add_noise,
    apply_noise,
    ideal_trace,
    measure_snr,
    random_link,
    start_level,
)
from otdrmtl.trainer import TrainConfig, train

EPS = 1e-5
GRAD_TOL = 1e-4
INSTANCES = 100
MODELS = ("MultitaskBiLstmCnn", "CnnOnly", "LstmOnly", "BiLstmOnly")


def record(log, n: int, ok: bool, detail: str) -> None:
    log.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def inversions(values, worse) -> list[float]:
    """Sizes of adjacent steps that go the wrong way."""
    return [abs(b - a) for a, b in zip(values, values[1:]) if worse(a, b)]


# ---------------------------------------------------------------- 1


def _worst(f, pairs) -> float:
    return max(rel_error(g, numeric_grad(f, x, EPS)) for x, g in pairs)


def _gc_dense(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)
    r = rng.normal(size=(3, 2))
    dx, dw, db = dense_backward(r, x, w)
    return _worst(lambda: float(np.sum(dense_forward(x, w, b) * r)), [(x, dx), (w, dw), (b, db)])


def _gc_conv(rng):
    x, w, b = rng.normal(size=(2, 7, 2)), rng.normal(size=(3, 2, 3)), rng.normal(size=3)
    r = rng.normal(size=(2, 5, 3))
    dx, dw, db = conv1d_backward(r, x, w)
    return _worst(lambda: float(np.sum(conv1d_forward(x, w, b) * r)), [(x, dx), (w, dw), (b, db)])


def _gc_maxpool(rng):
    x = rng.normal(size=(2, 8, 2))
    r = rng.normal(size=(2, 4, 2))
    _, arg = maxpool1d_forward(x, 2)
    return _worst(lambda: float(np.sum(maxpool1d_forward(x, 2)[0] * r)), [(x, maxpool1d_backward(r, arg, 8, 2))])


def _gc_dropout_eval(rng):
    x = rng.normal(size=(3, 5))
    r = rng.normal(size=(3, 5))
    _, mask = dropout_forward(x, 0.3, False)
    return _worst(lambda: float(np.sum(dropout_forward(x, 0.3, False)[0] * r)), [(x, dropout_backward(r, mask))])


def _lstm_params(rng, n_in, H):
    return (rng.normal(scale=0.5, size=(n_in, 4 * H)), rng.normal(scale=0.5, size=(H, 4 * H)), rng.normal(scale=0.5, size=4 * H))


def _gc_lstm(rng):
    x = rng.normal(size=(2, 4, 2))
    p = _lstm_params(rng, 2, 3)
    rev = bool(rng.integers(0, 2))
    r = rng.normal(size=(2, 4, 3))
    _, cache = lstm_forward(x, *p, rev)
    dx, *dp = lstm_backward(r, cache, p[0], p[1])
    f = lambda: float(np.sum(lstm_forward(x, *p, rev)[0] * r))  # noqa: E731
    return _worst(f, [(x, dx), *zip(p, dp)])


def _gc_bilstm(rng):
    x = rng.normal(size=(2, 4, 2))
    pf, pb = _lstm_params(rng, 2, 2), _lstm_params(rng, 2, 2)
    r = rng.normal(size=(2, 4, 4))
    _, caches = bilstm_forward(x, pf, pb)
    dx, gf, gb = bilstm_backward(r, caches, pf, pb)
    f = lambda: float(np.sum(bilstm_forward(x, pf, pb)[0] * r))  # noqa: E731
    return _worst(f, [(x, dx), *zip(pf, gf), *zip(pb, gb)])


def _gc_bce(rng):
    p, y = rng.uniform(0.05, 0.95, 6), rng.integers(0, 2, 6).astype(float)
    return _worst(lambda: bce(p, y)[0], [(p, bce(p, y)[1])])


def _gc_mse(rng):
    a, t, m = rng.normal(size=6), rng.normal(size=6), rng.random(6) < 0.7
    m[0] = True
    return _worst(lambda: mse(a, t, m)[0], [(a, mse(a, t, m)[1])])


def _gc_ce(rng):
    z, c = rng.normal(size=(4, 7)), rng.integers(0, 7, 4)
    return _worst(lambda: cross_entropy(z, c)[0], [(z, cross_entropy(z, c)[1])])


GRADCHECKS = {
    "dense": _gc_dense,
    "conv1d": _gc_conv,
    "maxpool": _gc_maxpool,
    "dropout-eval": _gc_dropout_eval,
    "LSTM": _gc_lstm,
    "BiLSTM": _gc_bilstm,
    "bce": _gc_bce,
    "mse": _gc_mse,
    "cross-entropy": _gc_ce,
}


def test_criterion_1_gradients(acceptance_log):
    t0 = time.perf_counter()
    worst = {}
    for i, (name, fn) in enumerate(GRADCHECKS.items()):
        rng = np.random.default_rng(1000 + i)
        worst[name] = max(fn(rng) for _ in range(INSTANCES))
    secs = time.perf_counter() - t0
    ok = all(v < GRAD_TOL for v in worst.values()) and secs < 120
    top = max(worst, key=worst.get)
    record(acceptance_log, 1, ok, f"{INSTANCES} instances x {len(worst)} ops, max rel err {worst[top]:.2e} ({top}), {secs:.1f}s")


# ---------------------------------------------------------------- 2


def _pairwise_auc(s, y):
    pos, neg = s[y], s[~y]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def _oracle_regression(p, t):
    n = len(p)
    rmse = math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(p, t)) / n)
    mae = math.fsum(abs(a - b) for a, b in zip(p, t)) / n
    terms = [0.0 if a == b == 0 else abs(a - b) / ((abs(a) + abs(b)) / 2) for a, b in zip(p, t)]
    return rmse, mae, 100.0 * math.fsum(terms) / n


def test_criterion_2_metric_oracles(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    auc_err = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        s = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding makes ties
        y = rng.random(n) < rng.uniform(0.1, 0.9)
        y[0], y[1] = True, False
        auc_err = max(auc_err, abs(roc_and_auc(s, y).auc - _pairwise_auc(s, y)))
    reg_err = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 100))
        p, t = rng.normal(scale=3, size=n), rng.normal(scale=3, size=n)
        if rng.random() < 0.1:
            p[0] = t[0] = 0.0
        for got, want in zip(regression_metrics(p, t), _oracle_regression(p.tolist(), t.tolist())):
            reg_err = max(reg_err, abs(got - want) / max(1.0, abs(want)))
    secs = time.perf_counter() - t0
    ok = auc_err <= 1e-9 and reg_err <= 1e-12 and secs < 60
    record(acceptance_log, 2, ok, f"AUC max dev {auc_err:.1e}, RMSE/MAE/SMAPE max dev {reg_err:.1e}, {secs:.1f}s")


# ---------------------------------------------------------------- 3-7 (desk run)


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    assert main(["dataset", "--seed", "0", "--out", str(root / "data")]) == 0
    t1 = time.perf_counter()
    assert main(["compare", "--seed", "0", "--dataset", str(root / "data" / "corpus"), "--classical", "--out", str(root / "cmp")]) == 0
    t2 = time.perf_counter()
    reports = {m: read_report(root / "cmp" / "reports" / f"{m}.report.json") for m in (*MODELS, "TwoPointLSQ")}
    return {"reports": reports, "dataset_s": t1 - t0, "compare_s": t2 - t1, "root": root}


def _hi_buckets(report, lo):
    return [b for b in report.buckets if b.lo >= lo and not b.empty]


def test_criterion_3_snr_trend(desk, acceptance_log):
    r = desk["reports"]["MultitaskBiLstmCnn"]
    pd = [b.detection_prob for b in r.buckets]
    p10 = min(b.detection_prob for b in _hi_buckets(r, 10))
    p20 = min(b.detection_prob for b in _hi_buckets(r, 20))
    inv = inversions(pd, lambda a, b: b < a)
    monotone = len(inv) == 0 or (len(inv) == 1 and inv[0] <= 0.02)
    # four trainings plus evaluation; the multitask share alone is a fraction of this
    minutes = desk["compare_s"] / 60
    ok = p10 >= 0.95 and p20 >= 0.99 and monotone and minutes < 45
    record(
        acceptance_log, 3, ok,
        f"P_d by bucket {[round(p, 3) for p in pd]}, min >=10 dB {p10:.3f}, min >=20 dB {p20:.3f}, "
        f"inversions {len(inv)}, compare wall time {minutes:.1f} min",
    )


def test_criterion_4_localization(desk, acceptance_log):
    r = desk["reports"]["MultitaskBiLstmCnn"]
    rmse = [b.position_rmse_m for b in r.buckets]
    worst20 = max(b.position_rmse_m for b in _hi_buckets(r, 20))
    inv = inversions(rmse, lambda a, b: b > a)
    ok = worst20 <= 5.0 and len(inv) <= 1
    record(acceptance_log, 4, ok, f"position RMSE [m] by bucket {[round(v, 3) for v in rmse]}, max >=20 dB {worst20:.3f}, inversions {len(inv)}")


def test_criterion_5_characterization(desk, acceptance_log):
    hi = _hi_buckets(desk["reports"]["MultitaskBiLstmCnn"], 20)
    loss = max(b.loss_rmse_db for b in hi)
    refl = max(b.refl_rmse_db for b in hi)
    record(acceptance_log, 5, loss <= 0.6 and refl <= 4.0, f"at >=20 dB loss RMSE {loss:.3f} dB, reflectance RMSE {refl:.3f} dB")


def test_criterion_6_identification(desk, acceptance_log):
    t4 = desk["reports"]["MultitaskBiLstmCnn"].t4
    ok = t4["accuracy"] >= 0.85 and t4["macro_auc"] >= 0.90
    record(acceptance_log, 6, ok, f"T4 accuracy {t4['accuracy']:.4f}, macro AUC {t4['macro_auc']:.4f}")


def test_criterion_7_baseline_ordering(desk, acceptance_log):
    reps = desk["reports"]
    lead = reps["MultitaskBiLstmCnn"]
    won = {m: tasks_won(lead, reps[m]) for m in MODELS[1:]}
    low = [(b, c) for b, c in zip(lead.buckets, reps["TwoPointLSQ"].buckets) if b.hi <= 5.0]
    beats_classical = bool(low) and all(b.detection_prob > c.detection_prob for b, c in low)
    ok = all(len(v) >= 2 for v in won.values()) and beats_classical
    record(
        acceptance_log, 7, ok,
        f"tasks matched/beaten {{{', '.join(f'{k}: {len(v)}' for k, v in won.items())}}}; "
        f"<=5 dB P_d neural {[round(b.detection_prob, 3) for b, _ in low]} vs classical {[round(c.detection_prob, 3) for _, c in low]}",
    )


# ---------------------------------------------------------------- 8


def _pipeline(root: Path) -> dict[str, bytes]:
    root.mkdir(parents=True)
    arch = {"lstm_hidden": 8, "conv_filters": 8, "head_hidden": [8, 8, 8, 8]}
    (root / "train.json").write_text(json.dumps({"architecture": arch, "train": {"batch_size": 32}}))
    (root / "eval.json").write_text(json.dumps({"calibration_per_bucket": 100}))
    steps = [
        ["simulate", "--preset", "none", "--count", "3", "--seed", "8", "--out", str(root / "sim")],
        ["dataset", "--count", "280", "--seed", "8", "--out", str(root / "data")],
        ["train", "--config", str(root / "train.json"), "--seed", "8", "--dataset", str(root / "data" / "corpus"),
         "--max-epochs", "2", "--out", str(root / "run")],
        ["eval", "--config", str(root / "eval.json"), "--seed", "8", "--dataset", str(root / "data" / "corpus"),
         "--model", str(root / "run" / "model_best"), "--classical", "--out", str(root / "eval")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    keep = [*(root / "sim").glob("trace_*"), *(root / "data").glob("corpus.*"), *(root / "eval").glob("*.report.json")]
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(keep)}


def test_criterion_8_determinism(tmp_path, acceptance_log):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = a.keys() == b.keys() and not differing
    record(acceptance_log, 8, ok, f"{len(a)} trace/dataset/report files compared, {len(differing)} differ {differing[:3]}")


# ---------------------------------------------------------------- 9


def test_criterion_9_simulator_physics(acceptance_log):
    t0 = time.perf_counter()
    cfg = OtdrConfig()

    add_err = 0.0
    for seed in range(50):
        link = random_link(LinkRandomizationSpec(event_count=(1, 4)), seed)
        tr = ideal_trace(link, cfg)
        last = link.events[-1]
        z = (last.position_m + last.extent_m + 2 * cfg.pulse_length_m + link.total_length_m - cfg.pulse_length_m) / 2
        i = int(round(z / tr.sample_spacing_m))
        gap = tr.samples_db[0] - cfg.attenuation_db_km * i * tr.sample_spacing_m / 1000 - tr.samples_db[i]
        add_err = max(add_err, abs(gap - sum(e.loss_db for e in link.events)))

    flat = ideal_trace(FiberLink(4000.0), cfg)
    inside = flat.distance_m < 4000.0
    shot = start_level(flat) * 1e-3
    std = lambda m, s: float(np.std(apply_noise(flat, shot, m, s).linear[inside] - flat.linear[inside]))  # noqa: E731
    ratio = std(1, 0) / std(100, 1)

    snr_err = 0.0
    spec = LinkRandomizationSpec(length_range_m=(800.0, 1600.0), end_margin_m=250.0)
    for snr in (0, 5, 10, 15, 20, 25, 30):
        for seed in range(3):
            tr = ideal_trace(random_link(spec, seed, classes=[seed % 6 + 1]), cfg)
            snr_err = max(snr_err, abs(measure_snr(add_noise(tr, snr, 1000, seed)) - snr))
    secs = time.perf_counter() - t0
    ok = add_err <= 0.01 and abs(ratio / 10 - 1) <= 0.1 and snr_err <= 0.5 and secs < 120
    record(
        acceptance_log, 9, ok,
        f"step additivity max err {add_err:.4f} dB, noise std ratio M=1/M=100 {ratio:.3f} (want 10), "
        f"SNR round trip max err {snr_err:.3f} dB, {secs:.1f}s",
    )


# ---------------------------------------------------------------- 10


def test_criterion_10_overfit(acceptance_log):
    t0 = time.perf_counter()
    ds = build_corpus(CorpusSpec(count=700), seed=0)
    train_split = ds.subset("train")
    pick = [train_split[i] for i in np.random.default_rng(2).choice(len(train_split), 32, replace=False)]
    small = Dataset(pick + pick, ["train"] * 32 + ["val"] * 32, seed=2, spec_hash="overfit", sample_spacing_m=ds.sample_spacing_m)
    cfg = TrainConfig(batch_size=8, learning_rate=1e-2, max_epochs=200, patience=199, dropout=0.0, seed=2)
    hist = train(Architecture(), small, cfg).history
    best = min(r.train_loss for r in hist.records)
    reached = next((r.epoch for r in hist.records if r.train_loss < 0.05), None)
    secs = time.perf_counter() - t0
    ok = reached is not None and secs < 180
    record(acceptance_log, 10, ok, f"train loss < 0.05 at epoch {reached}, best {best:.4f}, {secs:.1f}s")
