"""The multitask BiLSTM-CNN and its three single-encoder baselines.

All four share the same task heads; only the shared encoder differs:

* ``MultitaskBiLstmCnn``: BiLSTM(32) -> Conv1D(32, k=3, ReLU) -> MaxPool(2) -> Dropout -> flatten
* ``CnnOnly``: Conv1D -> MaxPool -> Dropout -> flatten
* ``LstmOnly``: LSTM(32) -> Dropout -> flatten
* ``BiLstmOnly``: BiLSTM(32) -> Dropout -> flatten

Heads, each one hidden ReLU layer: T1 detection (sigmoid), T2 normalized
onset position (linear), T3 loss and reflectance in standardized units
(linear), T4 seven-way cause (softmax).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import WINDOW, SequenceSample, to_arrays
from .errors import CalibrationError, CompatibilityError, ConfigError, ShapeError
from .nn import checkpoint as ckpt
from .nn.layers import BiLSTM, Conv1D, Dense, Dropout, Flatten, LSTM, MaxPool1D, Param, ReLU, Sequential
from .nn.losses import DEFAULT_WEIGHTS, bce, cross_entropy, mse, sigmoid, softmax, weighted_sum
from .sim import CAUSE_NAMES, OtdrConfig

ARCH_KINDS = ("MultitaskBiLstmCnn", "CnnOnly", "LstmOnly", "BiLstmOnly")
N_CLASSES = 7
HEAD_OUTPUTS = (1, 1, 2, N_CLASSES)
REFLECTIVE_CLASSES = frozenset({1, 2, 5, 6})


@dataclass(frozen=True)
class Architecture:
    kind: str = "MultitaskBiLstmCnn"
    window: int = WINDOW
    lstm_hidden: int = 32
    conv_filters: int = 32
    kernel: int = 3
    pool: int = 2
    dropout: float = 0.2
    head_hidden: tuple[int, int, int, int] = (16, 20, 32, 40)
    loss_weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS

    def __post_init__(self) -> None:
        if self.kind not in ARCH_KINDS:
            raise ConfigError(f"unknown architecture {self.kind!r}; choose from {ARCH_KINDS}")
        if min(self.window, self.lstm_hidden, self.conv_filters, self.kernel, self.pool) < 1:
            raise ConfigError("architecture sizes must be positive")
        if self.kernel > self.window:
            raise ConfigError("conv kernel longer than the window")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if len(self.head_hidden) != 4 or min(self.head_hidden) < 1:
            raise ConfigError("head_hidden needs four positive sizes")
        if len(self.loss_weights) != 4 or min(self.loss_weights) < 0:
            raise ConfigError("loss_weights needs four non-negative values")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_hidden"] = list(self.head_hidden)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Architecture":
        kw = dict(d)
        for key in ("head_hidden", "loss_weights"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class TargetStats:
    """Train-split mean and std used to standardize T3 targets."""

    loss_mean: float = 0.0
    loss_std: float = 1.0
    refl_mean: float = 0.0
    refl_std: float = 1.0

    @classmethod
    def fit(cls, loss_db: np.ndarray, refl_db: np.ndarray) -> "TargetStats":
        def ms(a):
            a = np.asarray(a, dtype=np.float64)
            a = a[np.isfinite(a)]
            if a.size == 0:
                return 0.0, 1.0
            s = float(a.std())
            return float(a.mean()), s if s > 1e-12 else 1.0

        lm, ls = ms(loss_db)
        rm, rs = ms(refl_db)
        return cls(lm, ls, rm, rs)

    def standardize(self, loss_db: np.ndarray, refl_db: np.ndarray) -> np.ndarray:
        return np.stack([(loss_db - self.loss_mean) / self.loss_std, (refl_db - self.refl_mean) / self.refl_std], 1)

    def destandardize(self, t3: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return t3[:, 0] * self.loss_std + self.loss_mean, t3[:, 1] * self.refl_std + self.refl_mean


@dataclass
class RawOutputs:
    """Head outputs before the final nonlinearity and de-standardization."""

    t1_logit: np.ndarray
    t2: np.ndarray
    t3: np.ndarray
    t4_logits: np.ndarray

    @property
    def t1_prob(self) -> np.ndarray:
        return sigmoid(self.t1_logit)

    @property
    def t4_probs(self) -> np.ndarray:
        return softmax(self.t4_logits)


@dataclass
class TaskOutputs:
    t1_prob: np.ndarray
    t2_pos: np.ndarray
    t3_loss: np.ndarray
    t3_refl: np.ndarray
    t4_probs: np.ndarray

    def __len__(self) -> int:
        return len(self.t1_prob)


@dataclass
class Labels:
    """Training targets. NaN marks an absent (masked) target."""

    has_event: np.ndarray
    t2: np.ndarray
    t3: np.ndarray
    cause: np.ndarray

    def __len__(self) -> int:
        return len(self.has_event)

    def take(self, idx: np.ndarray) -> "Labels":
        return Labels(self.has_event[idx], self.t2[idx], self.t3[idx], self.cause[idx])

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], stats: TargetStats, window: int = WINDOW) -> "Labels":
        return cls(
            has_event=np.asarray(arrays["has_event"], dtype=np.float64),
            t2=np.asarray(arrays["position"], dtype=np.float64) / (window - 1),
            t3=stats.standardize(np.asarray(arrays["loss_db"], float), np.asarray(arrays["reflectance_db"], float)),
            cause=np.asarray(arrays["cause_class"], dtype=int),
        )


def _encoder(arch: Architecture, rng: np.random.Generator) -> Sequential:
    H, F, k = arch.lstm_hidden, arch.conv_filters, arch.kernel
    if arch.kind == "MultitaskBiLstmCnn":
        layers = [
            BiLSTM("encoder.bilstm", 1, H, rng),
            Conv1D("encoder.conv", 2 * H, F, k, rng),
            ReLU("encoder.relu"),
            MaxPool1D("encoder.pool", arch.pool),
        ]
    elif arch.kind == "CnnOnly":
        layers = [Conv1D("encoder.conv", 1, F, k, rng), ReLU("encoder.relu"), MaxPool1D("encoder.pool", arch.pool)]
    elif arch.kind == "LstmOnly":
        layers = [LSTM("encoder.lstm", 1, H, rng)]
    else:
        layers = [BiLSTM("encoder.bilstm", 1, H, rng)]
    layers += [Dropout("encoder.dropout", arch.dropout), Flatten("encoder.flatten")]
    return Sequential("encoder", layers)


class MultitaskModel:
    def __init__(self, arch: Architecture, seed: int = 0) -> None:
        self.arch = arch
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoder = _encoder(arch, rng)
        shape = self.encoder.output_shape((1, arch.window, 1))
        if len(shape) != 2:
            raise ShapeError(f"encoder must end flat, got {shape}")
        self.flat_width = shape[1]
        self.heads = [
            Sequential(
                f"t{i + 1}",
                [Dense(f"t{i + 1}.hidden", self.flat_width, h, rng), ReLU(f"t{i + 1}.relu"), Dense(f"t{i + 1}.out", h, n, rng)],
            )
            for i, (h, n) in enumerate(zip(arch.head_hidden, HEAD_OUTPUTS))
        ]
        self.stats = TargetStats()
        self.threshold: float | None = None
        self.sample_spacing_m = OtdrConfig().sample_spacing_m

    # ---- parameters

    @property
    def params(self) -> list[Param]:
        return self.encoder.params + [p for h in self.heads for p in h.params]

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params}

    def load_state_dict(self, tensors: Mapping[str, np.ndarray]) -> None:
        for p in self.params:
            if p.name not in tensors:
                raise CompatibilityError(f"checkpoint lacks parameter {p.name}")
            v = np.asarray(tensors[p.name], dtype=np.float64)
            if v.shape != p.value.shape:
                raise CompatibilityError(f"{p.name}: checkpoint shape {v.shape} vs model {p.value.shape}")
            p.value[...] = v

    def layer_config(self) -> list[dict]:
        return [self.encoder.config()] + [h.config() for h in self.heads]

    # ---- passes

    def forward_raw(self, x: np.ndarray, train: bool = False, seed=None) -> RawOutputs:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[1:] != (self.arch.window, 1):
            raise ShapeError(f"expected input [batch, {self.arch.window}, 1], got {x.shape}")
        rng = np.random.default_rng(seed) if train else None
        z = self.encoder.forward(x, train, rng)
        outs = [h.forward(z, train, rng) for h in self.heads]
        return RawOutputs(outs[0][:, 0], outs[1][:, 0], outs[2], outs[3])

    def backward(self, grads: RawOutputs) -> None:
        """Accumulate parameter gradients from gradients w.r.t. the raw head outputs."""
        dz = self.heads[0].backward(grads.t1_logit[:, None])
        dz = dz + self.heads[1].backward(grads.t2[:, None])
        dz = dz + self.heads[2].backward(grads.t3)
        dz = dz + self.heads[3].backward(grads.t4_logits)
        self.encoder.backward(dz)

    def task_outputs(self, raw: RawOutputs) -> TaskOutputs:
        loss, refl = self.stats.destandardize(raw.t3)
        return TaskOutputs(raw.t1_prob, raw.t2.copy(), loss, refl, raw.t4_probs)

    def infer(self, x: np.ndarray, batch_size: int = 512) -> tuple[RawOutputs, TaskOutputs]:
        """Eval-mode forward in chunks."""
        x = np.asarray(x, dtype=np.float64)
        parts = [self.forward_raw(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        if not parts:
            raw = RawOutputs(np.zeros(0), np.zeros(0), np.zeros((0, 2)), np.zeros((0, N_CLASSES)))
        else:
            raw = RawOutputs(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("t1_logit", "t2", "t3", "t4_logits")))
        return raw, self.task_outputs(raw)


def build(arch: Architecture = Architecture(), seed: int = 0) -> MultitaskModel:
    return MultitaskModel(arch, seed)


def expected_param_count(arch: Architecture) -> int:
    """Closed-form parameter count, independent of the layer objects."""
    H, F, k = arch.lstm_hidden, arch.conv_filters, arch.kernel
    lstm = lambda n_in: 4 * H * (n_in + H + 1)  # noqa: E731
    L = arch.window
    if arch.kind == "MultitaskBiLstmCnn":
        enc = 2 * lstm(1) + F * (2 * H * k + 1)
        flat = ((L - k + 1) // arch.pool) * F
    elif arch.kind == "CnnOnly":
        enc = F * (k + 1)
        flat = ((L - k + 1) // arch.pool) * F
    elif arch.kind == "LstmOnly":
        enc = lstm(1)
        flat = L * H
    else:
        enc = 2 * lstm(1)
        flat = L * 2 * H
    heads = sum(flat * h + h + h * n + n for h, n in zip(arch.head_hidden, HEAD_OUTPUTS))
    return enc + heads


def forward(model: MultitaskModel, batch: np.ndarray, mode: str = "eval", seed=None) -> TaskOutputs:
    if mode not in ("train", "eval"):
        raise ConfigError("mode must be 'train' or 'eval'")
    return model.task_outputs(model.forward_raw(batch, train=mode == "train", seed=seed))


def total_loss(raw: RawOutputs, labels: Labels, weights: Sequence[float] = DEFAULT_WEIGHTS):
    """Weighted multitask loss.

    Returns ``(total, (l1, l2, l3, l4), grads)`` where ``grads`` holds the
    gradients of ``total`` w.r.t. the raw head outputs.
    """
    n = len(raw.t1_logit)
    if len(labels) != n:
        raise ShapeError(f"labels for {len(labels)} samples vs batch of {n}")
    p1 = sigmoid(raw.t1_logit)
    l1, dp1 = bce(p1, labels.has_event)
    l2, d2 = mse(raw.t2, labels.t2, np.isfinite(labels.t2))
    l3, d3 = mse(raw.t3, labels.t3, np.isfinite(labels.t3))
    l4, d4 = cross_entropy(raw.t4_logits, labels.cause)
    w = tuple(weights)
    total = weighted_sum((l1, l2, l3, l4), w)
    grads = RawOutputs(w[0] * dp1 * p1 * (1.0 - p1), w[1] * d2, w[2] * d3, w[3] * d4)
    return total, (l1, l2, l3, l4), grads


@dataclass
class Diagnosis:
    detected: bool
    t1_prob: float
    position_index: int | None = None
    position_m: float | None = None
    loss_db: float | None = None
    reflectance_db: float | None = None
    cause: int | None = None
    cause_name: str | None = None
    cause_prob: float | None = None


def position_index(t2_pos: float, window: int = WINDOW) -> int:
    """Onset index within the window; ties round half to even."""
    return int(np.clip(np.round(float(t2_pos) * (window - 1)), 0, window - 1))


def diagnose(
    out: TaskOutputs, i: int, threshold: float, spacing_m: float, window_start: int = 0, window: int = WINDOW
) -> Diagnosis:
    p = float(out.t1_prob[i])
    if p < threshold:
        return Diagnosis(detected=False, t1_prob=p)
    idx = position_index(out.t2_pos[i], window)
    cause = int(np.argmax(out.t4_probs[i]))
    return Diagnosis(
        detected=True,
        t1_prob=p,
        position_index=idx,
        position_m=(window_start + idx) * spacing_m,
        loss_db=float(out.t3_loss[i]),
        reflectance_db=float(out.t3_refl[i]) if cause in REFLECTIVE_CLASSES else None,
        cause=cause,
        cause_name=CAUSE_NAMES[cause],
        cause_prob=float(out.t4_probs[i, cause]),
    )


def predict(
    model: MultitaskModel,
    sample: SequenceSample | np.ndarray,
    threshold: float | str = 0.5,
    window_start: int | None = None,
) -> Diagnosis:
    """Diagnose one normalized window.

    ``threshold="far"`` uses the model's FAR-calibrated threshold and fails
    when none has been calibrated.
    """
    if threshold == "far":
        if model.threshold is None:
            raise CalibrationError("no FAR-calibrated threshold; run evaluation calibration first")
        threshold = model.threshold
    elif isinstance(threshold, str):
        raise ConfigError(f"unknown threshold mode {threshold!r}")
    if isinstance(sample, SequenceSample):
        x = sample.values
        start = sample.window_start if window_start is None else window_start
    else:
        x = np.asarray(sample, dtype=np.float64).reshape(-1)
        start = window_start or 0
    _, out = model.infer(x.reshape(1, -1, 1))
    return diagnose(out, 0, float(threshold), model.sample_spacing_m, start, model.arch.window)


# ---- checkpoint io


def model_meta(model: MultitaskModel) -> dict:
    return {
        "kind": "model",
        "architecture": model.arch.to_dict(),
        "layers": model.layer_config(),
        "n_params": model.n_params,
        "init_seed": model.seed,
        "target_stats": asdict(model.stats),
        "threshold": model.threshold,
        "sample_spacing_m": model.sample_spacing_m,
    }


def save_model(model: MultitaskModel, stem: str | Path, extra: Mapping | None = None, dtype: str = "float32"):
    meta = model_meta(model)
    if extra:
        meta.update(extra)
    return ckpt.save_checkpoint(stem, model.state_dict(), meta, dtype=dtype)


def model_from_meta(meta: Mapping, tensors: Mapping[str, np.ndarray]) -> MultitaskModel:
    try:
        arch = Architecture.from_dict(meta["architecture"])
    except (KeyError, ConfigError) as exc:
        raise CompatibilityError(f"checkpoint architecture block unusable: {exc}") from exc
    model = build(arch, int(meta.get("init_seed", 0)))
    if meta.get("layers") is not None and meta["layers"] != model.layer_config():
        raise CompatibilityError("checkpoint layer list does not match its architecture")
    model.load_state_dict(tensors)
    model.stats = TargetStats(**meta.get("target_stats", {}))
    model.threshold = meta.get("threshold")
    model.sample_spacing_m = float(meta.get("sample_spacing_m", model.sample_spacing_m))
    return model


def load_model(stem: str | Path) -> MultitaskModel:
    tensors, meta = ckpt.load_checkpoint(stem)
    return model_from_meta(meta, tensors)


def prepare(samples: Sequence[SequenceSample], stats: TargetStats, window: int = WINDOW) -> tuple[np.ndarray, Labels]:
    arrays = to_arrays(samples)
    return arrays["x"], Labels.from_arrays(arrays, stats, window)
