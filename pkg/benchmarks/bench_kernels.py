"""Compiled versus numpy kernels.

Times each hot kernel directly from both modules, then one full training
step of the multitask model under each backend (in a subprocess, since the
backend is fixed at import).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from otdrmtl.nn import _pykernels

try:
    from otdrmtl.nn import _ckernels
except ImportError:
    _ckernels = None

T, B, H = 50, 32, 32


def _cases(rng: np.random.Generator):
    xp = rng.normal(size=(T, B, 4 * H))
    wh = rng.normal(scale=0.2, size=(H, 4 * H))
    fwd = _pykernels.lstm_forward_seq(xp, wh)
    dhs = rng.normal(size=(T, B, H))
    pool_x = rng.normal(size=(B, 48, 32))
    _, arg = _pykernels.maxpool_forward(pool_x, 2)
    pool_dy = rng.normal(size=(B, 24, 32))
    trace = np.cumsum(rng.normal(scale=0.01, size=20000))
    return {
        "lstm_forward_seq": lambda k: k.lstm_forward_seq(xp, wh),
        "lstm_backward_seq": lambda k: k.lstm_backward_seq(dhs, fwd[3], fwd[1], fwd[2], wh),
        "maxpool_forward": lambda k: k.maxpool_forward(pool_x, 2),
        "maxpool_backward": lambda k: k.maxpool_backward(pool_dy, arg, 48, 2),
        "lsq_scan (20k samples)": lambda k: k.lsq_scan(trace, 16),
    }


_STEP = """
import timeit, numpy as np
from otdrmtl.model import Architecture, build, total_loss, Labels, TargetStats
from otdrmtl.nn import adam_step, AdamState
from otdrmtl.nn._backend import BACKEND
m = build(Architecture(), 0)
rng = np.random.default_rng(0)
x = rng.random((32, 50, 1))
arr = {"has_event": np.ones(32), "position": rng.integers(0, 50, 32).astype(float),
       "loss_db": rng.uniform(0, 5, 32), "reflectance_db": np.full(32, np.nan),
       "cause_class": rng.integers(0, 7, 32)}
y = Labels.from_arrays(arr, TargetStats())
st = AdamState()
def step():
    m.zero_grad()
    raw = m.forward_raw(x, train=True, seed=1)
    _, _, g = total_loss(raw, y)
    m.backward(g)
    adam_step(m.params, st)
step()
print(BACKEND, min(timeit.repeat(step, number=5, repeat=REPEAT)) / 5)
"""


def _train_step(backend: str, repeat: int) -> float:
    env = {**os.environ, "OTDRMTL_BACKEND": backend}
    out = subprocess.run(
        [sys.executable, "-c", _STEP.replace("REPEAT", str(repeat))], env=env, capture_output=True, text=True, check=True
    )
    name, secs = out.stdout.split()
    if backend == "cython" and name != "cython":
        raise RuntimeError("compiled kernels requested but not importable")
    return float(secs)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    rows = []
    for name, fn in _cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=3, repeat=args.repeat)) / 3
        t_cy = min(timeit.repeat(lambda: fn(_ckernels), number=3, repeat=args.repeat)) / 3
        rows.append((name, t_py, t_cy))
    rows.append(("train step (batch 32)", _train_step("python", args.repeat), _train_step("cython", args.repeat)))
    print(f"{'kernel':<26}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for name, a, b in rows:
        print(f"{name:<26}{a * 1e3:>12.3f}{b * 1e3:>13.3f}{a / b:>8.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{"kernel": n, "numpy_s": a, "cython_s": b} for n, a, b in rows], fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
