"""Labeled 50-sample windows cut from OTDR traces, corpora and their file format."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, ExtractionError, IntegrityError, SpecError, VersionError
from .io_utils import atomic_write_text, sha256_hex
from .sim import (
    EventKind,
    FaultEvent,
    LinkRandomizationSpec,
    OtdrConfig,
    OtdrTrace,
    add_noise,
    ideal_trace,
    random_link,
)

WINDOW = 50
SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")
NO_EVENT = "no_event"
VALUE_COLUMNS = [f"v{i}" for i in range(WINDOW)]
LABEL_COLUMNS = [
    "has_event",
    "event_kind",
    "position_index",
    "loss_db",
    "reflectance_db",
    "cause_class",
    "snr_db",
    "trace_id",
    "window_start",
]


def _r9(x: float) -> float:
    return float(f"{x:.9g}")


@dataclass
class SequenceSample:
    values: np.ndarray
    has_event: bool
    event_kind: str
    position_index: int | None
    loss_db: float | None
    reflectance_db: float | None
    cause_class: int
    snr_db: float
    trace_id: int
    window_start: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (WINDOW,):
            raise DataError(f"window must have {WINDOW} values, got shape {self.values.shape}")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise DataError("normalized values must lie in [0, 1]")
        no_event = self.event_kind == NO_EVENT
        chain = (not self.has_event, no_event, self.cause_class == 0)
        if len(set(chain)) != 1:
            raise DataError(
                f"inconsistent labels: has_event={self.has_event} kind={self.event_kind} class={self.cause_class}"
            )
        if no_event and (self.position_index, self.loss_db, self.reflectance_db) != (None, None, None):
            raise DataError("no-event windows carry no position or characterization targets")
        if self.event_kind == EventKind.NON_REFLECTIVE.value and self.reflectance_db is not None:
            raise DataError("non-reflective windows carry no reflectance")
        if self.position_index is not None and not 0 <= self.position_index < WINDOW:
            raise DataError(f"position index {self.position_index} outside the window")

    def row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else f"{v:.9g}"

        return [f"{v:.9g}" for v in self.values] + [
            "1" if self.has_event else "0",
            self.event_kind,
            "" if self.position_index is None else str(self.position_index),
            fmt(self.loss_db),
            fmt(self.reflectance_db),
            str(self.cause_class),
            fmt(self.snr_db),
            str(self.trace_id),
            str(self.window_start),
        ]

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> "SequenceSample":
        def opt(key, conv=float):
            v = row[key]
            return None if v == "" else conv(v)

        return cls(
            values=np.array([float(row[c]) for c in VALUE_COLUMNS]),
            has_event=row["has_event"] == "1",
            event_kind=row["event_kind"],
            position_index=opt("position_index", int),
            loss_db=opt("loss_db"),
            reflectance_db=opt("reflectance_db"),
            cause_class=int(row["cause_class"]),
            snr_db=float(row["snr_db"]),
            trace_id=int(row["trace_id"]),
            window_start=int(row["window_start"]),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SequenceSample):
            return NotImplemented
        return self.row() == other.row()


def normalize_minmax(raw: np.ndarray) -> np.ndarray:
    """Per-window min-max to [0, 1]; constant windows map to 0.5."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise DataError("window contains NaN or infinite values")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)


# dB range shown by a fixed-span window, top-aligned to the window maximum
FIXED_SPAN_DB = 30.0


def normalize_fixed_span(raw: np.ndarray, span_db: float = FIXED_SPAN_DB) -> np.ndarray:
    """Map the window maximum to 1 and ``span_db`` below it to 0, clipping lower samples.

    Unlike min-max this keeps dB differences on one scale across windows, so
    step heights and peak heights stay readable.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise DataError("window contains NaN or infinite values")
    return np.clip(1.0 + (raw - raw.max()) / span_db, 0.0, 1.0)


SYMLOG_KNEE_DB = 0.1
SYMLOG_RANGE_DB = 40.0


def normalize_symlog(raw: np.ndarray, knee_db: float = SYMLOG_KNEE_DB, range_db: float = SYMLOG_RANGE_DB) -> np.ndarray:
    """Signed-log companding of the deviation from the window median.

    ``d = x - median(x)`` maps to ``0.5 + 0.5 * sign(d) * log1p(|d|/knee) / log1p(range/knee)``,
    clipped to [0, 1]. The map is monotone and window-independent, so dB
    step and peak heights remain recoverable, while sub-dB steps still span
    a visible fraction of the unit interval.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise DataError("window contains NaN or infinite values")
    d = raw - np.median(raw)
    v = 0.5 + 0.5 * np.sign(d) * np.log1p(np.abs(d) / knee_db) / math.log1p(range_db / knee_db)
    return np.clip(v, 0.0, 1.0)


def invert_symlog(values: np.ndarray, knee_db: float = SYMLOG_KNEE_DB, range_db: float = SYMLOG_RANGE_DB) -> np.ndarray:
    """dB deviation from the window median; exact except where clipping occurred."""
    u = 2.0 * (np.asarray(values, dtype=np.float64) - 0.5)
    return np.sign(u) * knee_db * np.expm1(np.abs(u) * math.log1p(range_db / knee_db))


def invert_fixed_span(values: np.ndarray, span_db: float = FIXED_SPAN_DB) -> np.ndarray:
    """dB below the window maximum (clipped samples stay at ``-span_db``)."""
    return (np.asarray(values, dtype=np.float64) - 1.0) * span_db


NORMALIZERS = {"minmax": normalize_minmax, "fixed_span": normalize_fixed_span, "symlog": normalize_symlog}
# min-max discards the dB scale, so it has no inverse
INVERSES = {"fixed_span": invert_fixed_span, "symlog": invert_symlog}


def normalize(raw: np.ndarray, method: str = "minmax") -> np.ndarray:
    try:
        fn = NORMALIZERS[method]
    except KeyError:
        raise ConfigError(f"unknown normalization {method!r}; choose from {sorted(NORMALIZERS)}") from None
    return fn(raw)


@dataclass(frozen=True)
class ExtractionPolicy:
    """One window per ground-truth event plus ``no_event_windows`` clean windows.

    For the four-event long-setup trace this yields five windows and for the
    single-reflector trace two, matching how the lab corpus was cut.
    """

    event_windows: bool = True
    no_event_windows: int = 1
    margin: int = 2
    normalization: str = "symlog"

    def __post_init__(self) -> None:
        if self.no_event_windows < 0:
            raise ConfigError("no_event_windows must be >= 0")
        if not 0 <= self.margin < WINDOW // 2:
            raise ConfigError(f"margin must lie in [0, {WINDOW // 2})")
        if self.normalization not in NORMALIZERS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")


def _event_span(trace: OtdrTrace, ev: FaultEvent) -> tuple[int, int]:
    """Samples touched by an event: onset up to the end of its last pulse (exclusive)."""
    dz = trace.sample_spacing_m
    lo = trace.onset_index(ev.position_m)
    hi = int(math.ceil((ev.position_m + ev.extent_m + trace.config.pulse_length_m) / dz)) + 1
    return lo - 1, hi


def _labels(ev: FaultEvent) -> tuple[str, float, float | None]:
    return ev.kind.value, ev.loss_db, ev.reflectance_db


def extract_windows(
    trace: OtdrTrace,
    policy: ExtractionPolicy = ExtractionPolicy(),
    seed: int = 0,
    trace_id: int = 0,
) -> list[SequenceSample]:
    """Cut labeled windows from ``trace``; event windows first, in link order."""
    rng = np.random.default_rng(seed)
    n = len(trace)
    events = trace.ground_truth.events
    spans = [_event_span(trace, ev) for ev in events]
    fiber_end = int(trace.ground_truth.total_length_m / trace.sample_spacing_m) - 1
    out: list[SequenceSample] = []

    def make(start: int, **labels) -> SequenceSample:
        values = normalize(trace.samples_db[start : start + WINDOW], policy.normalization)
        return SequenceSample(
            values=np.array([_r9(v) for v in values]),
            snr_db=_r9(trace.snr_db),
            trace_id=trace_id,
            window_start=start,
            **labels,
        )

    if policy.event_windows:
        for k, (ev, (lo, hi)) in enumerate(zip(events, spans)):
            onset = trace.onset_index(ev.position_m)
            choices = []
            for p in range(policy.margin, WINDOW - policy.margin):
                start = onset - p
                if start < 0 or start + WINDOW > n:
                    continue
                clash = any(
                    j != k and s_lo < start + WINDOW and start < s_hi for j, (s_lo, s_hi) in enumerate(spans)
                )
                if not clash:
                    choices.append(p)
            if not choices:
                raise ExtractionError(
                    f"event {k} at {ev.position_m:.1f} m cannot be windowed with a {policy.margin}-sample margin"
                )
            p = int(choices[int(rng.integers(len(choices)))])
            kind, loss, refl = _labels(ev)
            out.append(
                make(
                    onset - p,
                    has_event=True,
                    event_kind=kind,
                    position_index=p,
                    loss_db=_r9(loss),
                    reflectance_db=None if refl is None else _r9(refl),
                    cause_class=ev.cause_class,
                )
            )

    if policy.no_event_windows:
        clean = np.zeros(n, dtype=bool)
        clean[: max(fiber_end, 0)] = True
        for lo, hi in spans:
            clean[max(lo, 0) : max(hi, 0)] = False
        run = np.concatenate([[0], np.cumsum(clean)])
        starts = np.flatnonzero(run[WINDOW:] - run[:-WINDOW] == WINDOW)
        if len(starts) == 0:
            raise ExtractionError("trace has no event-free stretch of 50 samples")
        picks = rng.choice(starts, size=policy.no_event_windows, replace=len(starts) < policy.no_event_windows)
        for start in picks:
            out.append(
                make(
                    int(start),
                    has_event=False,
                    event_kind=NO_EVENT,
                    position_index=None,
                    loss_db=None,
                    reflectance_db=None,
                    cause_class=0,
                )
            )
    return out


SNR_BUCKET_EDGES = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)


def snr_bucket(snr_db: float, edges: Sequence[float] = SNR_BUCKET_EDGES) -> int:
    """Index of the bucket ``[edges[i], edges[i+1])``; the top edge is inclusive."""
    i = int(np.searchsorted(edges, snr_db, side="right")) - 1
    return min(max(i, 0), len(edges) - 2)


@dataclass(frozen=True)
class CorpusSpec:
    """How to synthesize a corpus. Each trace contributes one window.

    Class 0 traces have no events; every other trace carries one event of the
    scheduled cause class on a short link, so the window's SNR matches the
    trace SNR to within the fiber loss of the lead-in.
    """

    count: int = 6000
    snr_range_db: tuple[float, float] = (0.0, 30.0)
    snr_grid_db: tuple[float, ...] | None = None
    class_weights: Mapping[int, float] = field(default_factory=lambda: {c: 1.0 for c in range(7)})
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    link: LinkRandomizationSpec = field(
        default_factory=lambda: LinkRandomizationSpec(length_range_m=(800.0, 1600.0), end_margin_m=250.0)
    )
    otdr: OtdrConfig = field(default_factory=OtdrConfig)
    launch_power_range_dbm: tuple[float, float] = (7.0, 17.0)
    shots_range: tuple[int, int] = (62, 64000)
    normalization: str = "symlog"
    margin: int = 2

    def __post_init__(self) -> None:
        if self.count < 0:
            raise SpecError("count must be >= 0")
        if len(self.split_ratios) != 3 or min(self.split_ratios) < 0 or abs(sum(self.split_ratios) - 1) > 1e-9:
            raise SpecError(f"split ratios must be three non-negative numbers summing to 1, got {self.split_ratios}")
        if not self.class_weights or min(self.class_weights.values()) < 0 or sum(self.class_weights.values()) <= 0:
            raise SpecError("class weights must be non-negative with a positive sum")
        for c in self.class_weights:
            if not 0 <= int(c) <= 6:
                raise SpecError(f"cause class {c} outside 0-6")
            if int(c) and int(c) not in self.link.profiles:
                raise SpecError(f"class {c} has no cause profile; balance unattainable")
        lo, hi = self.snr_range_db
        if lo > hi:
            raise SpecError(f"invalid SNR range {self.snr_range_db}")
        if self.normalization not in NORMALIZERS:
            raise SpecError(f"unknown normalization {self.normalization!r}")
        if not 7.0 <= self.launch_power_range_dbm[0] <= self.launch_power_range_dbm[1] <= 17.0:
            raise SpecError("launch power range must lie within [7, 17] dBm")
        if not 1 <= self.shots_range[0] <= self.shots_range[1]:
            raise SpecError("invalid shots range")

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "snr_range_db": list(self.snr_range_db),
            "snr_grid_db": None if self.snr_grid_db is None else list(self.snr_grid_db),
            "class_weights": {str(k): float(v) for k, v in sorted(self.class_weights.items())},
            "split_ratios": list(self.split_ratios),
            "link": self.link.to_dict(),
            "otdr": self.otdr.to_dict(),
            "launch_power_range_dbm": list(self.launch_power_range_dbm),
            "shots_range": list(self.shots_range),
            "normalization": self.normalization,
            "margin": self.margin,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusSpec":
        kw = dict(d)
        if "link" in kw:
            kw["link"] = LinkRandomizationSpec.from_dict(kw["link"])
        if "otdr" in kw:
            kw["otdr"] = OtdrConfig(**kw["otdr"])
        if "class_weights" in kw:
            kw["class_weights"] = {int(k): float(v) for k, v in kw["class_weights"].items()}
        for key in ("snr_range_db", "split_ratios", "launch_power_range_dbm", "shots_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if kw.get("snr_grid_db") is not None:
            kw["snr_grid_db"] = tuple(float(v) for v in kw["snr_grid_db"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc

    def digest(self) -> str:
        return sha256_hex(json.dumps(self.to_dict(), sort_keys=True).encode())


@dataclass
class Dataset:
    samples: list[SequenceSample]
    splits: list[str]
    seed: int = 0
    spec_hash: str = ""
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    sample_spacing_m: float = OtdrConfig().sample_spacing_m
    normalization: str = "symlog"
    spec: dict | None = None

    def __post_init__(self) -> None:
        if len(self.splits) != len(self.samples):
            raise DataError("split assignment must cover every sample")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise DataError(f"unknown split names {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, split: str) -> list[SequenceSample]:
        return [s for s, sp in zip(self.samples, self.splits) if sp == split]

    def class_histogram(self) -> dict[int, int]:
        hist = {c: 0 for c in range(7)}
        for s in self.samples:
            hist[s.cause_class] += 1
        return hist

    def snr_histogram(self, edges: Sequence[float] = SNR_BUCKET_EDGES) -> list[int]:
        hist = [0] * (len(edges) - 1)
        for s in self.samples:
            hist[snr_bucket(s.snr_db, edges)] += 1
        return hist

    def manifest(self, samples_sha256: str) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "creation_seed": self.seed,
            "generator_spec_hash": self.spec_hash,
            "count": len(self.samples),
            "class_histogram": {str(k): v for k, v in self.class_histogram().items()},
            "snr_bucket_edges_db": list(SNR_BUCKET_EDGES),
            "snr_histogram": self.snr_histogram(),
            "split_ratios": list(self.split_ratios),
            "splits": "".join(str(SPLITS.index(s)) for s in self.splits),
            "sample_spacing_m": self.sample_spacing_m,
            "normalization": self.normalization,
            "samples_sha256": samples_sha256,
            "spec": self.spec,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.samples == other.samples
            and self.splits == other.splits
            and self.seed == other.seed
            and self.spec_hash == other.spec_hash
            and tuple(self.split_ratios) == tuple(other.split_ratios)
            and self.sample_spacing_m == other.sample_spacing_m
        )


def assign_splits(
    keys: Sequence[tuple], ratios: Sequence[float], rng: np.random.Generator
) -> list[str]:
    """Stratified split: group by key, shuffle within groups, then deal samples
    along the concatenated order to whichever split lags its quota most.

    Global counts stay within one sample of the ratios and every stratum
    within two.
    """
    keys = list(keys)
    order = sorted(range(len(keys)), key=lambda i: keys[i])
    groups: dict[tuple, list[int]] = {}
    for i in order:
        groups.setdefault(keys[i], []).append(i)
    sequence: list[int] = []
    for key in sorted(groups):
        members = groups[key]
        sequence.extend(members[j] for j in rng.permutation(len(members)))
    counts = np.zeros(3)
    ratios = np.asarray(ratios, dtype=float)
    out = [""] * len(keys)
    for k, i in enumerate(sequence):
        j = int(np.argmax((k + 1) * ratios - counts))
        counts[j] += 1
        out[i] = SPLITS[j]
    return out


def _class_schedule(spec: CorpusSpec, rng: np.random.Generator) -> np.ndarray:
    """Class per trace, matching the weights to within one sample per class."""
    classes = sorted(int(c) for c in spec.class_weights)
    w = np.array([spec.class_weights[c] for c in classes], dtype=float)
    w /= w.sum()
    quota = np.floor(w * spec.count).astype(int)
    rest = spec.count - quota.sum()
    if rest:
        frac = w * spec.count - quota
        quota[np.argsort(-frac, kind="stable")[:rest]] += 1
    sched = np.repeat(classes, quota)
    return sched[rng.permutation(len(sched))]


def _one_trace(args: tuple) -> SequenceSample:
    spec, trace_id, cls, snr, launch, shots, link_seed, noise_seed, cut_seed = args
    cfg = OtdrConfig(**{**spec.otdr.to_dict(), "launch_power_dbm": launch, "shots_to_average": shots})
    link = random_link(spec.link, link_seed, classes=[cls] if cls else [])
    trace = add_noise(ideal_trace(link, cfg), snr, shots, noise_seed)
    policy = ExtractionPolicy(
        event_windows=bool(cls), no_event_windows=0 if cls else 1, margin=spec.margin, normalization=spec.normalization
    )
    (sample,) = extract_windows(trace, policy, seed=cut_seed, trace_id=trace_id)
    return sample


def build_corpus(spec: CorpusSpec, seed: int, jobs: int = 1) -> Dataset:
    """Synthesize ``spec.count`` windows; a pure function of ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    classes = _class_schedule(spec, rng)
    if spec.snr_grid_db is not None:
        snrs = rng.choice(np.asarray(spec.snr_grid_db, dtype=float), size=spec.count)
    else:
        snrs = rng.uniform(*spec.snr_range_db, size=spec.count)
    launches = rng.uniform(*spec.launch_power_range_dbm, size=spec.count)
    lo, hi = spec.shots_range
    shots = np.round(np.exp(rng.uniform(math.log(lo), math.log(hi), size=spec.count))).astype(int)
    seeds = rng.integers(0, 2**63 - 1, size=(spec.count, 3))
    tasks = [
        (spec, i, int(classes[i]), float(snrs[i]), float(launches[i]), int(shots[i]), *map(int, seeds[i]))
        for i in range(spec.count)
    ]
    if jobs > 1 and spec.count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(_one_trace, tasks, chunksize=64))
    else:
        samples = [_one_trace(t) for t in tasks]

    keys = [(s.cause_class, snr_bucket(s.snr_db)) for s in samples]
    splits = assign_splits(keys, spec.split_ratios, rng)
    return Dataset(
        samples=samples,
        splits=splits,
        seed=seed,
        spec_hash=spec.digest(),
        split_ratios=tuple(spec.split_ratios),
        sample_spacing_m=spec.otdr.sample_spacing_m,
        normalization=spec.normalization,
        spec=spec.to_dict(),
    )


CALIBRATION_PER_BUCKET = 300


def calibration_negatives(
    spec: CorpusSpec,
    seed: int,
    per_bucket: int = CALIBRATION_PER_BUCKET,
    edges: Sequence[float] = SNR_BUCKET_EDGES,
    jobs: int = 1,
) -> list[SequenceSample]:
    """Fresh no-event windows, ``per_bucket`` in every SNR bucket the spec can reach.

    Used to set one FAR threshold per bucket; the validation split alone holds
    too few negatives per bucket for a 1% quantile.
    """
    out: list[SequenceSample] = []
    lo_all, hi_all = spec.snr_range_db
    for b in range(len(edges) - 1):
        lo, hi = max(edges[b], lo_all), min(edges[b + 1], hi_all)
        grid = None
        if spec.snr_grid_db is not None:
            grid = tuple(g for g in spec.snr_grid_db if snr_bucket(g, edges) == b)
            if not grid:
                continue
        elif lo >= hi:
            continue
        sub = replace(spec, count=per_bucket, class_weights={0: 1.0}, snr_range_db=(lo, hi), snr_grid_db=grid)
        sub_seed = int(np.random.SeedSequence([seed, b]).generate_state(1)[0])
        out.extend(build_corpus(sub, sub_seed, jobs).samples)
    return out


def _paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    name = path.name
    for suffix in (".manifest.json", ".samples.csv"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return path.with_name(f"{name}.manifest.json"), path.with_name(f"{name}.samples.csv")


def save_dataset(ds: Dataset, path: str | Path) -> tuple[Path, Path]:
    """Write ``<name>.samples.csv`` then ``<name>.manifest.json`` (both atomically)."""
    manifest_path, samples_path = _paths(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(VALUE_COLUMNS + LABEL_COLUMNS)
    for s in ds.samples:
        writer.writerow(s.row())
    data = buf.getvalue()
    atomic_write_text(samples_path, data)
    manifest = ds.manifest(sha256_hex(data.encode()))
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path, samples_path


def load_dataset(path: str | Path) -> Dataset:
    manifest_path, samples_path = _paths(path)
    for p in (manifest_path, samples_path):
        if not p.exists():
            raise DataError(f"missing dataset file {p}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise VersionError(f"dataset schema {manifest.get('schema_version')} != supported {SCHEMA_VERSION}")
    raw = samples_path.read_bytes()
    if sha256_hex(raw) != manifest.get("samples_sha256"):
        raise IntegrityError(f"{samples_path} does not match the manifest hash")
    reader = csv.DictReader(io.StringIO(raw.decode()))
    if reader.fieldnames != VALUE_COLUMNS + LABEL_COLUMNS:
        raise IntegrityError(f"{samples_path} has an unexpected header")
    samples = [SequenceSample.from_row(r) for r in reader]
    codes = {str(i): s for i, s in enumerate(SPLITS)}
    try:
        splits = [codes[c] for c in manifest["splits"]]
    except KeyError as exc:
        raise IntegrityError(f"unknown split code {exc} in {manifest_path}") from exc
    if len(samples) != manifest["count"]:
        raise IntegrityError("sample count differs from manifest")
    return Dataset(
        samples=samples,
        splits=splits,
        seed=manifest["creation_seed"],
        spec_hash=manifest["generator_spec_hash"],
        split_ratios=tuple(manifest["split_ratios"]),
        sample_spacing_m=manifest["sample_spacing_m"],
        normalization=manifest.get("normalization", "symlog"),
        spec=manifest.get("spec"),
    )


def to_arrays(samples: Sequence[SequenceSample]) -> dict[str, np.ndarray]:
    """Stack samples into model-ready arrays; absent targets become NaN."""
    n = len(samples)
    x = np.zeros((n, WINDOW, 1))
    out = {
        "has_event": np.zeros(n),
        "position": np.full(n, np.nan),
        "loss_db": np.full(n, np.nan),
        "reflectance_db": np.full(n, np.nan),
        "cause_class": np.zeros(n, dtype=int),
        "snr_db": np.zeros(n),
    }
    for i, s in enumerate(samples):
        x[i, :, 0] = s.values
        out["has_event"][i] = float(s.has_event)
        if s.position_index is not None:
            out["position"][i] = s.position_index
        if s.loss_db is not None:
            out["loss_db"][i] = s.loss_db
        if s.reflectance_db is not None:
            out["reflectance_db"][i] = s.reflectance_db
        out["cause_class"][i] = s.cause_class
        out["snr_db"][i] = s.snr_db
    out["x"] = x
    return out
