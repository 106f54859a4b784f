"""Synthetic OTDR traces with reflective, non-reflective and merged fault events.

Levels are in the usual OTDR display convention, ``5 * log10(P / 1 mW)``, so a
one-way loss of ``L`` dB shows up as a step of ``L`` dB and fiber attenuation
as a slope of ``alpha`` dB/km.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, EstimationError, ResourceError, SpecError
from .io_utils import atomic_write_text

C_VACUUM = 299_792_458.0
BACKSCATTER_DB_50NS = -52.0
FLOOR_REL = 1e-12
SNR_CAP_DB = 99.0
MAX_SAMPLES = 10_000_000
PC_REFLECTANCE_DB = -14.4
REFLECTOR_REFLECTANCE_DB = -10.0

CAUSE_NAMES = {
    0: "no fault",
    1: "longitudinal connector misalignment",
    2: "perpendicular fiber cut",
    3: "fiber bend",
    4: "tilted fiber cut",
    5: "merged reflective events (dirty connectors)",
    6: "merged reflective and non-reflective events (dirty connector and bend)",
}


class EventKind(str, Enum):
    REFLECTIVE = "reflective"
    NON_REFLECTIVE = "non_reflective"
    MERGED = "merged"


class Termination(str, Enum):
    APC = "apc"
    PC = "pc"
    REFLECTOR = "reflector"


KIND_CLASSES = {
    EventKind.REFLECTIVE: (1, 2),
    EventKind.NON_REFLECTIVE: (3, 4),
    EventKind.MERGED: (5, 6),
}


def kind_of_class(cause_class: int) -> EventKind:
    for kind, classes in KIND_CLASSES.items():
        if cause_class in classes:
            return kind
    raise ConfigError(f"cause class {cause_class} has no event kind")


@dataclass(frozen=True)
class OtdrConfig:
    pulse_width_ns: float = 50.0
    wavelength_nm: float = 1650.0
    sample_interval_ns: float = 8.0
    group_index: float = 1.468
    attenuation_db_km: float = 0.22
    launch_power_dbm: float = 10.0
    shots_to_average: int = 1000

    def __post_init__(self) -> None:
        if not self.pulse_width_ns > 0:
            raise ConfigError(f"pulse_width_ns must be > 0, got {self.pulse_width_ns}")
        if not self.sample_interval_ns > 0:
            raise ConfigError(f"sample_interval_ns must be > 0, got {self.sample_interval_ns}")
        if not self.wavelength_nm > 0:
            raise ConfigError(f"wavelength_nm must be > 0, got {self.wavelength_nm}")
        if not 1.4 <= self.group_index <= 1.6:
            raise ConfigError(f"group_index must lie in [1.4, 1.6], got {self.group_index}")
        if not self.attenuation_db_km > 0:
            raise ConfigError(f"attenuation_db_km must be > 0, got {self.attenuation_db_km}")
        if not 7.0 <= self.launch_power_dbm <= 17.0:
            raise ConfigError(f"launch_power_dbm must lie in [7, 17], got {self.launch_power_dbm}")
        if int(self.shots_to_average) != self.shots_to_average or self.shots_to_average < 1:
            raise ConfigError(f"shots_to_average must be a positive integer, got {self.shots_to_average}")

    @property
    def sample_spacing_m(self) -> float:
        return sample_spacing(self)

    @property
    def pulse_length_m(self) -> float:
        """Spatial extent of the probe pulse (two-way)."""
        return C_VACUUM * self.pulse_width_ns * 1e-9 / (2.0 * self.group_index)

    @property
    def backscatter_db(self) -> float:
        return BACKSCATTER_DB_50NS + 10.0 * math.log10(self.pulse_width_ns / 50.0)

    @property
    def launch_power_mw(self) -> float:
        return 10.0 ** (self.launch_power_dbm / 10.0)

    def to_dict(self) -> dict:
        return asdict(self)


def sample_spacing(config: OtdrConfig) -> float:
    """Distance between samples in metres: ``c * dt / (2 n_g)``."""
    return C_VACUUM * config.sample_interval_ns * 1e-9 / (2.0 * config.group_index)


@dataclass(frozen=True)
class SubEvent:
    """One physical discontinuity; ``offset_m`` is relative to the owning event."""

    offset_m: float
    loss_db: float
    reflectance_db: float | None = None


@dataclass(frozen=True)
class FaultEvent:
    position_m: float
    kind: EventKind
    loss_db: float
    reflectance_db: float | None
    cause_class: int
    parts: tuple[SubEvent, ...] = ()

    def __post_init__(self) -> None:
        kind = EventKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.cause_class not in KIND_CLASSES[kind]:
            raise ConfigError(f"cause class {self.cause_class} is inconsistent with kind {kind.value}")
        if self.loss_db < 0:
            raise ConfigError(f"event loss must be >= 0, got {self.loss_db}")
        if kind is EventKind.NON_REFLECTIVE:
            if self.reflectance_db is not None:
                raise ConfigError("non-reflective events carry no reflectance")
            if not self.loss_db > 0:
                raise ConfigError("non-reflective events need a positive loss")
        if kind is EventKind.REFLECTIVE:
            if self.reflectance_db is None or not -50.0 <= self.reflectance_db <= -15.0:
                raise ConfigError(f"reflective events need reflectance in [-50, -15] dB, got {self.reflectance_db}")
        if kind is EventKind.MERGED:
            if len(self.parts) != 2:
                raise ConfigError("merged events consist of exactly two sub-events")
        elif not self.parts:
            object.__setattr__(self, "parts", (SubEvent(0.0, self.loss_db, self.reflectance_db),))

    @classmethod
    def merged(cls, position_m: float, first: SubEvent, second: SubEvent, cause_class: int) -> "FaultEvent":
        """Two co-located sub-events; labels are the summed loss and summed reflected power."""
        parts = (replace(first, offset_m=0.0), second)
        refl = [p.reflectance_db for p in parts if p.reflectance_db is not None]
        reflectance = 10.0 * math.log10(sum(10.0 ** (r / 10.0) for r in refl)) if refl else None
        return cls(
            position_m=position_m,
            kind=EventKind.MERGED,
            loss_db=first.loss_db + second.loss_db,
            reflectance_db=reflectance,
            cause_class=cause_class,
            parts=parts,
        )

    @property
    def extent_m(self) -> float:
        return max(p.offset_m for p in self.parts)

    def to_dict(self) -> dict:
        return {
            "position_m": self.position_m,
            "kind": self.kind.value,
            "loss_db": self.loss_db,
            "reflectance_db": self.reflectance_db,
            "cause_class": self.cause_class,
            "parts": [asdict(p) for p in self.parts],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FaultEvent":
        return cls(
            position_m=float(d["position_m"]),
            kind=EventKind(d["kind"]),
            loss_db=float(d["loss_db"]),
            reflectance_db=None if d.get("reflectance_db") is None else float(d["reflectance_db"]),
            cause_class=int(d["cause_class"]),
            parts=tuple(SubEvent(**p) for p in d.get("parts", ())),
        )


@dataclass(frozen=True)
class FiberLink:
    total_length_m: float
    events: tuple[FaultEvent, ...] = ()
    end_termination: Termination = Termination.APC

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "end_termination", Termination(self.end_termination))
        if not self.total_length_m > 0:
            raise ConfigError(f"total_length_m must be > 0, got {self.total_length_m}")
        prev = None
        for ev in self.events:
            if not 0 < ev.position_m < self.total_length_m:
                raise ConfigError(f"event at {ev.position_m} m lies outside (0, {self.total_length_m})")
            if prev is not None and ev.position_m <= prev.position_m:
                raise ConfigError("events must be strictly ordered by position")
            prev = ev

    def validate_spacing(self, pulse_length_m: float) -> None:
        for a, b in zip(self.events, self.events[1:]):
            gap = b.position_m - (a.position_m + a.extent_m)
            if gap < 2.0 * pulse_length_m:
                raise ConfigError(
                    f"events at {a.position_m:.1f} m and {b.position_m:.1f} m are closer than two pulse "
                    "widths; model them as one merged event"
                )
        for ev in self.events:
            if ev.kind is EventKind.MERGED and not 0 < ev.parts[1].offset_m <= pulse_length_m + 1e-9:
                raise ConfigError("merged sub-events must be separated by at most one pulse width")

    @property
    def end_reflectance_db(self) -> float | None:
        return {
            Termination.APC: None,
            Termination.PC: PC_REFLECTANCE_DB,
            Termination.REFLECTOR: REFLECTOR_REFLECTANCE_DB,
        }[self.end_termination]

    def to_dict(self) -> dict:
        return {
            "total_length_m": self.total_length_m,
            "end_termination": self.end_termination.value,
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FiberLink":
        return cls(
            total_length_m=float(d["total_length_m"]),
            events=tuple(FaultEvent.from_dict(e) for e in d.get("events", ())),
            end_termination=Termination(d.get("end_termination", "apc")),
        )


@dataclass
class OtdrTrace:
    samples_db: np.ndarray
    sample_spacing_m: float
    config: OtdrConfig
    ground_truth: FiberLink
    snr_db: float = SNR_CAP_DB
    rng_seed: int | None = None
    noise_std: float = 0.0
    shots: int = 1

    def __len__(self) -> int:
        return len(self.samples_db)

    @property
    def distance_m(self) -> np.ndarray:
        return np.arange(len(self.samples_db)) * self.sample_spacing_m

    @property
    def linear(self) -> np.ndarray:
        return 10.0 ** (self.samples_db / 5.0)

    def onset_index(self, position_m: float) -> int:
        """First sample at or after ``position_m``."""
        return int(math.ceil(position_m / self.sample_spacing_m - 1e-9))

    def export(self, stem: str | Path) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` and the ``<stem>.json`` sidecar."""
        stem = Path(stem)
        dist = self.distance_m
        rows = ["index,distance_m,level_db"]
        rows += [f"{i},{dist[i]:.6f},{v:.9g}" for i, v in enumerate(self.samples_db)]
        csv_path = stem.with_suffix(".csv")
        json_path = stem.with_suffix(".json")
        atomic_write_text(csv_path, "\n".join(rows) + "\n")
        sidecar = {
            "config": self.config.to_dict(),
            "ground_truth": self.ground_truth.to_dict(),
            "seed": self.rng_seed,
            "snr_db": self.snr_db,
            "noise_std": self.noise_std,
            "shots": self.shots,
            "sample_spacing_m": self.sample_spacing_m,
        }
        atomic_write_text(json_path, json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    @classmethod
    def load(cls, stem: str | Path) -> "OtdrTrace":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        data = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        return cls(
            samples_db=data[:, 2].copy(),
            sample_spacing_m=float(meta["sample_spacing_m"]),
            config=OtdrConfig(**meta["config"]),
            ground_truth=FiberLink.from_dict(meta["ground_truth"]),
            snr_db=float(meta["snr_db"]),
            rng_seed=meta["seed"],
            noise_std=float(meta["noise_std"]),
            shots=int(meta["shots"]),
        )


def _loss_profile(z: np.ndarray, link: FiberLink, config: OtdrConfig) -> np.ndarray:
    """Cumulative one-way loss in dB at each distance (fiber + ramped event steps)."""
    w = config.pulse_length_m
    loss = config.attenuation_db_km * np.minimum(z, link.total_length_m) / 1000.0
    for ev in link.events:
        for part in ev.parts:
            if part.loss_db:
                loss = loss + part.loss_db * np.clip((z - ev.position_m - part.offset_m) / w, 0.0, 1.0)
    return loss


def ideal_trace(link: FiberLink, config: OtdrConfig, tail_m: float | None = None) -> OtdrTrace:
    """Noiseless trace of ``link``; samples continue ``tail_m`` past the fiber end."""
    dz = config.sample_spacing_m
    w = config.pulse_length_m
    link.validate_spacing(w)
    if tail_m is None:
        tail_m = max(20.0 * w, 0.02 * link.total_length_m)
    n = int(math.ceil((link.total_length_m + tail_m) / dz)) + 1
    if n > MAX_SAMPLES:
        raise ResourceError(f"link needs {n} samples, budget is {MAX_SAMPLES}")

    z = np.arange(n) * dz
    launch = config.launch_power_mw
    bs0 = launch * 10.0 ** (config.backscatter_db / 10.0)
    lin = bs0 * 10.0 ** (-_loss_profile(z, link, config) / 5.0)
    lin[z >= link.total_length_m] = 0.0

    def pre_level(pos: float) -> float:
        return float(bs0 * 10.0 ** (-_loss_profile(np.array([pos]), link, config)[0] / 5.0))

    reflections = [
        (ev.position_m + p.offset_m, p.reflectance_db)
        for ev in link.events
        for p in ev.parts
        if p.reflectance_db is not None
    ]
    if link.end_reflectance_db is not None:
        reflections.append((link.total_length_m, link.end_reflectance_db))
    for pos, refl in reflections:
        mask = (z >= pos) & (z < pos + w)
        lin[mask] += pre_level(pos) * 10.0 ** ((refl - config.backscatter_db) / 10.0)

    samples = 5.0 * np.log10(np.maximum(lin, FLOOR_REL * launch))
    return OtdrTrace(samples, dz, config, link, snr_db=SNR_CAP_DB, rng_seed=None)


def start_level(trace: OtdrTrace) -> float:
    """Linear backscatter power at the start of the fiber (no noise)."""
    cfg = trace.config
    return cfg.launch_power_mw * 10.0 ** (cfg.backscatter_db / 10.0)


def apply_noise(trace: OtdrTrace, shot_std: float, shots: int, seed: int) -> OtdrTrace:
    """Average ``shots`` acquisitions with per-shot Gaussian noise ``shot_std`` (linear power).

    The mean of ``shots`` iid N(0, s^2) draws is N(0, s^2 / shots), which is
    what gets sampled here.
    """
    if int(shots) != shots or shots < 1:
        raise ConfigError(f"shots must be >= 1, got {shots}")
    if shot_std < 0:
        raise ConfigError(f"noise std must be >= 0, got {shot_std}")
    if shot_std == 0:
        return replace(trace, samples_db=trace.samples_db.copy(), rng_seed=seed, shots=int(shots))
    rng = np.random.default_rng(seed)
    std = shot_std / math.sqrt(shots)
    noisy = trace.linear + rng.standard_normal(len(trace)) * std
    floor = FLOOR_REL * trace.config.launch_power_mw
    samples = 5.0 * np.log10(np.maximum(noisy, floor))
    snr = min(SNR_CAP_DB, 10.0 * math.log10(start_level(trace) / std))
    return replace(trace, samples_db=samples, snr_db=snr, rng_seed=seed, noise_std=std, shots=int(shots))


def add_noise(trace: OtdrTrace, target_snr_db: float, shots: int, seed: int) -> OtdrTrace:
    """Noisy copy of ``trace`` whose start-of-fiber SNR is ``target_snr_db``."""
    if int(shots) != shots or shots < 1:
        raise ConfigError(f"shots must be >= 1, got {shots}")
    if math.isinf(target_snr_db) and target_snr_db > 0:
        return apply_noise(trace, 0.0, shots, seed)
    avg_std = start_level(trace) * 10.0 ** (-target_snr_db / 10.0)
    out = apply_noise(trace, avg_std * math.sqrt(shots), shots, seed)
    out.snr_db = float(target_snr_db)
    return out


@dataclass(frozen=True)
class SnrEstimate:
    snr_db: float
    signal: float
    noise_std: float
    degenerate: bool


def _event_free_regions(trace: OtdrTrace) -> list[tuple[int, int]]:
    """Sample ranges inside the fiber untouched by any event, lead-in first."""
    link = trace.ground_truth
    dz = trace.sample_spacing_m
    w = trace.config.pulse_length_m
    bounds = [0.0]
    for ev in link.events:
        bounds += [ev.position_m, ev.position_m + ev.extent_m + 2.0 * w]
    bounds.append(link.total_length_m - w)
    regions = []
    for a, b in zip(bounds[::2], bounds[1::2]):
        lo, hi = int(math.ceil(a / dz)), min(int(b / dz), len(trace))
        regions.append((lo, max(lo, hi)))
    return regions


def _trimmed_mean(x: np.ndarray, cut: float = 0.2) -> float:
    lo, hi = np.quantile(x, [cut, 1.0 - cut])
    return float(np.mean(x[(x >= lo) & (x <= hi)]))


def estimate_snr(trace: OtdrTrace, max_region: int = 16384) -> SnrEstimate:
    """Start-of-fiber backscatter over noise std, from event-free stretches.

    The level is a 20 % trimmed mean of the lead-in with the known fiber
    slope divided out; the noise std is the upper semi-deviation about each
    region's median. Neither reads the lower tail, so clamping at the power
    floor does not bias them.
    """
    if len(trace) < 100:
        raise EstimationError(f"SNR estimation needs >= 100 samples, trace has {len(trace)}")
    regions = _event_free_regions(trace)
    lead_lo, lead_hi = regions[0]
    lead_hi = min(lead_hi, lead_lo + max_region)
    if lead_hi - lead_lo < 50:
        raise EstimationError(f"event-free lead-in has {lead_hi - lead_lo} samples, need >= 50")
    lin = trace.linear
    dz = trace.sample_spacing_m
    alpha = trace.config.attenuation_db_km
    floor = FLOOR_REL * trace.config.launch_power_mw
    at_floor = lin <= floor * 1.000001

    sq_sum, count = 0.0, 0
    signal = 0.0
    for k, (lo, hi) in enumerate(regions):
        if hi - lo < 50 or (k and np.mean(at_floor[lo:hi]) > 0.4):
            continue
        z = np.arange(lo, hi) * dz
        decay = 10.0 ** (-alpha * z / 5000.0)
        flat = lin[lo:hi] / decay
        resid = lin[lo:hi] - np.median(flat) * decay
        up = resid[resid > 0]
        sq_sum += float(np.sum(up * up))
        count += len(up)
        if k == 0:
            signal = _trimmed_mean(flat)
    sigma = math.sqrt(sq_sum / count) if count else 0.0
    degenerate = bool(np.mean(at_floor[lead_lo:lead_hi]) > 0.3 or signal <= 10 * floor)
    if sigma <= signal * 10.0 ** (-SNR_CAP_DB / 10.0):
        snr = SNR_CAP_DB
    elif signal <= 0:
        snr = -SNR_CAP_DB
    else:
        snr = 10.0 * math.log10(signal / sigma)
    if degenerate:
        snr = min(snr, 0.0)
    return SnrEstimate(snr, signal, sigma, degenerate)


def measure_snr(trace: OtdrTrace) -> float:
    return estimate_snr(trace).snr_db


@dataclass(frozen=True)
class PartProfile:
    loss_db: tuple[float, float]
    reflectance_db: tuple[float, float] | None = None


@dataclass(frozen=True)
class CauseProfile:
    """Parameter ranges for one cause class; merged classes have two parts."""

    parts: tuple[PartProfile, ...]


DEFAULT_CAUSE_PROFILES: dict[int, CauseProfile] = {
    1: CauseProfile((PartProfile((0.1, 0.6), (-50.0, -40.0)),)),
    2: CauseProfile((PartProfile((3.0, 6.0), (-25.0, -15.0)),)),
    3: CauseProfile((PartProfile((1.0, 2.5)),)),
    4: CauseProfile((PartProfile((3.5, 6.0)),)),
    5: CauseProfile((PartProfile((0.1, 0.5), (-38.0, -28.0)), PartProfile((0.1, 0.5), (-38.0, -28.0)))),
    6: CauseProfile((PartProfile((0.1, 0.5), (-45.0, -30.0)), PartProfile((1.0, 3.0)))),
}


def _profiles_from_dict(d: Mapping) -> dict[int, CauseProfile]:
    out = {}
    for key, parts in d.items():
        out[int(key)] = CauseProfile(
            tuple(
                PartProfile(
                    tuple(p["loss_db"]),
                    None if p.get("reflectance_db") is None else tuple(p["reflectance_db"]),
                )
                for p in parts
            )
        )
    return out


@dataclass(frozen=True)
class LinkRandomizationSpec:
    """Ranges and mixture weights for :func:`random_link`.

    ``class_weights`` (cause class -> weight) takes precedence over
    ``kind_weights``; with kind weights the class is uniform within the kind.
    """

    length_range_m: tuple[float, float] = (2000.0, 8000.0)
    event_count: tuple[int, int] = (1, 4)
    kind_weights: Mapping[str, float] = field(
        default_factory=lambda: {"reflective": 1.0, "non_reflective": 1.0, "merged": 1.0}
    )
    class_weights: Mapping[int, float] | None = None
    loss_range_db: tuple[float, float] = (0.1, 10.0)
    reflectance_range_db: tuple[float, float] = (-50.0, -15.0)
    end_margin_m: float = 100.0
    pulse_length_m: float = OtdrConfig().pulse_length_m
    min_spacing_pulses: float = 3.0
    termination_weights: Mapping[str, float] = field(default_factory=lambda: {"apc": 1.0})
    profiles: Mapping[int, CauseProfile] = field(default_factory=lambda: dict(DEFAULT_CAUSE_PROFILES))

    def __post_init__(self) -> None:
        lo, hi = self.length_range_m
        if not 0 < lo <= hi:
            raise SpecError(f"invalid length range {self.length_range_m}")
        cmin, cmax = self.event_count
        if not 0 <= cmin <= cmax:
            raise SpecError(f"invalid event count range {self.event_count}")
        llo, lhi = self.loss_range_db
        if not 0 <= llo <= lhi <= 10.0:
            raise SpecError(f"loss range must lie within [0, 10] dB, got {self.loss_range_db}")
        rlo, rhi = self.reflectance_range_db
        if not -50.0 <= rlo <= rhi <= -15.0:
            raise SpecError(f"reflectance range must lie within [-50, -15] dB, got {self.reflectance_range_db}")
        weights = self._class_weight_table()
        if not weights or min(weights.values()) < 0 or sum(weights.values()) <= 0:
            raise SpecError("mixture weights must be non-negative with a positive sum")
        for c in weights:
            if c not in self.profiles:
                raise SpecError(f"no cause profile for class {c}")
        if not self.termination_weights or sum(self.termination_weights.values()) <= 0:
            raise SpecError("termination weights must have a positive sum")

    def _class_weight_table(self) -> dict[int, float]:
        if self.class_weights is not None:
            table = {int(c): float(w) for c, w in self.class_weights.items()}
            for c in table:
                kind_of_class(c)
            return table
        table = {}
        for name, w in self.kind_weights.items():
            classes = KIND_CLASSES[EventKind(name)]
            for c in classes:
                table[c] = table.get(c, 0.0) + float(w) / len(classes)
        return table

    def to_dict(self) -> dict:
        return {
            "length_range_m": list(self.length_range_m),
            "event_count": list(self.event_count),
            "kind_weights": dict(self.kind_weights),
            "class_weights": None if self.class_weights is None else {str(k): v for k, v in self.class_weights.items()},
            "loss_range_db": list(self.loss_range_db),
            "reflectance_range_db": list(self.reflectance_range_db),
            "end_margin_m": self.end_margin_m,
            "pulse_length_m": self.pulse_length_m,
            "min_spacing_pulses": self.min_spacing_pulses,
            "termination_weights": dict(self.termination_weights),
            "profiles": {
                str(c): [
                    {"loss_db": list(p.loss_db), "reflectance_db": None if p.reflectance_db is None else list(p.reflectance_db)}
                    for p in prof.parts
                ]
                for c, prof in sorted(self.profiles.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinkRandomizationSpec":
        kw = dict(d)
        for key in ("length_range_m", "loss_range_db", "reflectance_range_db"):
            if key in kw:
                kw[key] = tuple(float(v) for v in kw[key])
        if "event_count" in kw:
            ec = kw["event_count"]
            kw["event_count"] = (int(ec), int(ec)) if isinstance(ec, (int, float)) else tuple(int(v) for v in ec)
        if kw.get("class_weights") is not None:
            kw["class_weights"] = {int(k): float(v) for k, v in kw["class_weights"].items()}
        if "profiles" in kw:
            kw["profiles"] = {**DEFAULT_CAUSE_PROFILES, **_profiles_from_dict(kw["profiles"])}
        try:
            return cls(**kw)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "LinkRandomizationSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _draw_range(rng: np.random.Generator, rng_range: tuple[float, float], clip: tuple[float, float]) -> float:
    lo, hi = max(rng_range[0], clip[0]), min(rng_range[1], clip[1])
    if lo > hi:
        raise SpecError(f"profile range {rng_range} does not intersect {clip}")
    return float(rng.uniform(lo, hi))


def random_event(
    spec: LinkRandomizationSpec, cause_class: int, position_m: float, rng: np.random.Generator
) -> FaultEvent:
    parts = []
    for part in spec.profiles[cause_class].parts:
        loss = _draw_range(rng, part.loss_db, spec.loss_range_db)
        refl = None
        if part.reflectance_db is not None:
            refl = _draw_range(rng, part.reflectance_db, spec.reflectance_range_db)
        parts.append(SubEvent(0.0, loss, refl))
    kind = kind_of_class(cause_class)
    if kind is EventKind.MERGED:
        first, second = parts
        if rng.random() < 0.5:
            first, second = second, first
        # separation in (0, W]
        sep = float(spec.pulse_length_m * (1.0 - rng.random()))
        return FaultEvent.merged(position_m, first, replace(second, offset_m=sep), cause_class)
    (only,) = parts
    if kind is EventKind.NON_REFLECTIVE:
        return FaultEvent(position_m, kind, max(only.loss_db, 1e-6), None, cause_class)
    return FaultEvent(position_m, kind, only.loss_db, only.reflectance_db, cause_class)


def random_link(spec: LinkRandomizationSpec, seed: int, classes: Sequence[int] | None = None) -> FiberLink:
    """Draw a link; ``classes`` pins the cause classes of its events (in random order)."""
    rng = np.random.default_rng(seed)
    length = float(rng.uniform(*spec.length_range_m))
    table = spec._class_weight_table()
    if classes is None:
        count = int(rng.integers(spec.event_count[0], spec.event_count[1] + 1))
        keys = sorted(table)
        p = np.array([table[k] for k in keys], dtype=float)
        classes = [keys[i] for i in rng.choice(len(keys), size=count, p=p / p.sum())]
    else:
        classes = [int(c) for c in rng.permutation(np.asarray(classes, dtype=int))]
    count = len(classes)

    gap = spec.min_spacing_pulses * spec.pulse_length_m
    usable = length - 2.0 * spec.end_margin_m - max(count - 1, 0) * gap
    if count and usable < 0:
        raise SpecError(f"{count} events with {gap:.1f} m spacing do not fit in a {length:.0f} m link")
    offsets = np.sort(rng.uniform(0.0, usable, size=count)) if count else np.empty(0)
    positions = spec.end_margin_m + offsets + np.arange(count) * gap
    events = tuple(random_event(spec, c, float(pos), rng) for c, pos in zip(classes, positions))

    names = sorted(spec.termination_weights)
    tw = np.array([spec.termination_weights[k] for k in names], dtype=float)
    term = Termination(names[int(rng.choice(len(names), p=tw / tw.sum()))])
    return FiberLink(length, events, term)


def setup1_link(end: str = "pc", config: OtdrConfig | None = None) -> FiberLink:
    """Four-event geometry of the long setup: two merged events, a bend and the
    end-of-setup event (perpendicular cut for a PC end, tilted cut for APC)."""
    w = (config or OtdrConfig()).pulse_length_m
    merged_a = FaultEvent.merged(995.0, SubEvent(0.0, 0.4, -42.0), SubEvent(0.6 * w, 1.2), 6)
    merged_b = FaultEvent.merged(3003.0, SubEvent(0.0, 0.3, -40.0), SubEvent(0.5 * w, 0.5, -38.0), 5)
    bend = FaultEvent(4014.0, EventKind.NON_REFLECTIVE, 1.0, None, 3)
    if Termination(end) is Termination.APC:
        last = FaultEvent(6012.0, EventKind.NON_REFLECTIVE, 5.0, None, 4)
    else:
        last = FaultEvent(6012.0, EventKind.REFLECTIVE, 4.0, -20.0, 2)
    return FiberLink(6800.0, (merged_a, merged_b, bend, last), Termination.APC)


def setup2_link(reflectance_db: float = -40.0) -> FiberLink:
    """Single reflective event from a reflector after the first kilometre."""
    ev = FaultEvent(1000.0, EventKind.REFLECTIVE, 0.5, reflectance_db, 1)
    return FiberLink(2000.0, (ev,), Termination.APC)


PRESETS = {"setup1": setup1_link, "setup2": setup2_link}
