"""``otdrmtl`` command line: simulate, dataset, train, eval, compare, plot.

Every command merges a JSON config file with command-line overrides, writes
the fully resolved config next to its outputs and stages all files in a
temporary directory that is moved into place only on success.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .dataset import CALIBRATION_PER_BUCKET, CorpusSpec, build_corpus, calibration_negatives, load_dataset, save_dataset
from .errors import ConfigError, DataError, OtdrError
from .eval import (
    DEFAULT_FAR,
    MIN_NEGATIVES,
    LsqParams,
    bucket_negative_scores,
    classical_predictions,
    evaluate,
    model_predictions,
    negative_scores,
    read_report,
    table_csv,
    tasks_won,
    write_report,
)
from .io_utils import atomic_write_text
from .model import ARCH_KINDS, Architecture, load_model
from .nn.checkpoint import checkpoint_paths
from .plotting import plot_reports
from .sim import PRESETS, LinkRandomizationSpec, OtdrConfig, add_noise, ideal_trace, random_link
from .trainer import BEST_STEM, DESK_TRAIN_CONFIG, STATE_STEM, TrainConfig, resume, train

log = logging.getLogger("otdrmtl")

RESOLVED_NAME = "config.resolved.json"
COMMON = ("seed", "out", "jobs")

_TRAIN_DEFAULTS = {k: v for k, v in DESK_TRAIN_CONFIG.to_dict().items() if k != "seed"}
_EVAL_DEFAULTS = {"far": DEFAULT_FAR, "calibration_per_bucket": CALIBRATION_PER_BUCKET, "lsq": {}}

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"preset": "setup1", "preset_options": {}, "link": None, "otdr": {}, "count": 1, "snr_db": 25.0, "tail_m": None},
    "dataset": {"name": "corpus", "corpus": {}},
    "train": {"dataset": None, "architecture": {}, "train": _TRAIN_DEFAULTS, "resume": False},
    "eval": {"dataset": None, "model": None, "classical": False, **_EVAL_DEFAULTS},
    "compare": {
        "dataset": None,
        "kinds": list(ARCH_KINDS),
        "architecture": {},
        "train": _TRAIN_DEFAULTS,
        "models": {},
        "classical": False,
        **_EVAL_DEFAULTS,
    },
    "plot": {"reports": []},
}


# ------------------------------------------------------------------ config


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"config {p} must hold a JSON object")
    return d


def resolve_config(command: str, file_cfg: Mapping, overrides: Mapping) -> dict:
    """Defaults, then the file, then non-None overrides. Unknown keys are errors."""
    if file_cfg.get("command", command) != command:
        raise ConfigError(f"config was resolved for {file_cfg['command']!r}, not {command!r}")
    allowed = set(DEFAULTS[command]) | set(COMMON) | {"command"}
    unknown = sorted(set(file_cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg: dict[str, Any] = {"command": command, "seed": 0, "out": f"otdrmtl-{command}", "jobs": 1}
    cfg.update(json.loads(json.dumps(DEFAULTS[command])))
    for k, v in file_cfg.items():
        if isinstance(cfg.get(k), dict) and isinstance(v, dict) and k not in ("models",):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise ConfigError(f"jobs must be a positive integer, got {cfg['jobs']!r}")
    cfg["out"] = str(Path(cfg["out"]).resolve())
    for key in ("dataset", "model"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    if command == "plot":
        cfg["reports"] = [str(Path(r).resolve()) for r in cfg["reports"]]
    if command == "compare":
        cfg["models"] = {k: str(Path(v).resolve()) for k, v in cfg["models"].items()}
    return cfg


def _typed(fn: Callable, *args, **kw):
    """Build a config object, reporting bad field types as config errors."""
    try:
        return fn(*args, **kw)
    except OtdrError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _require(cfg: Mapping, key: str, what: str) -> Path:
    if not cfg.get(key):
        raise ConfigError(f"{cfg['command']} needs {what}: set '{key}' in the config or pass --{key}")
    return Path(cfg[key])


@contextmanager
def staged(out: Path):
    """Yield a scratch directory whose files land in ``out`` only if the block succeeds."""
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}.staging-"))
    try:
        yield tmp
        for src in sorted(p for p in tmp.rglob("*") if p.is_file()):
            dst = out / src.relative_to(tmp)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _write_resolved(stage: Path, cfg: Mapping) -> None:
    atomic_write_text(stage / RESOLVED_NAME, json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ simulate


def _simulate_one(task: tuple):
    i, seed, link_d, preset, preset_options, otdr_d, snr, tail_m = task
    ss = np.random.SeedSequence([seed, i])
    link_seed, noise_seed = (int(v) for v in ss.generate_state(2, dtype=np.uint64) >> np.uint64(1))
    otdr = OtdrConfig(**otdr_d)
    if preset is not None:
        fn = PRESETS[preset]
        opts = dict(preset_options)
        if preset == "setup1":
            opts.setdefault("config", otdr)
        link = fn(**opts)
    else:
        link = random_link(LinkRandomizationSpec.from_dict(link_d or {}), link_seed)
    trace = ideal_trace(link, otdr, tail_m)
    if snr is not None:
        trace = add_noise(trace, float(snr), otdr.shots_to_average, noise_seed)
    return trace


def _pool_map(fn, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_simulate(cfg: dict) -> list[Path]:
    count = cfg["count"]
    if not isinstance(count, int) or count < 0:
        raise ConfigError(f"count must be a non-negative integer, got {count!r}")
    if count == 0:
        log.warning("count is 0: nothing to simulate")
        return []
    preset = cfg["preset"]
    if isinstance(preset, str) and preset.lower() == "none":  # a None override would be dropped, so keep the word
        preset = None
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    _typed(OtdrConfig, **cfg["otdr"])
    if preset is None:
        _typed(LinkRandomizationSpec.from_dict, cfg["link"] or {})
    snrs = cfg["snr_db"] if isinstance(cfg["snr_db"], list) else [cfg["snr_db"]]
    if not snrs:
        raise ConfigError("snr_db list is empty")
    tasks = [
        (i, cfg["seed"], cfg["link"], preset, cfg["preset_options"], cfg["otdr"], snrs[i % len(snrs)], cfg["tail_m"])
        for i in range(count)
    ]
    traces = _typed(_pool_map, _simulate_one, tasks, cfg["jobs"])
    out = Path(cfg["out"])
    with staged(out) as stage:
        for i, tr in enumerate(traces):
            tr.export(stage / f"trace_{i:04d}")
        _write_resolved(stage, cfg)
    log.info("wrote %d traces to %s", count, out)
    return sorted(out.glob("trace_*"))


# ------------------------------------------------------------------ dataset


def cmd_dataset(cfg: dict) -> list[Path]:
    spec = _typed(CorpusSpec.from_dict, cfg["corpus"])
    ds = build_corpus(spec, cfg["seed"], jobs=cfg["jobs"])
    out = Path(cfg["out"])
    with staged(out) as stage:
        save_dataset(ds, stage / cfg["name"])
        _write_resolved(stage, cfg)
    log.info("wrote %d samples to %s", len(ds), out)
    return [out / f"{cfg['name']}.manifest.json", out / f"{cfg['name']}.samples.csv"]


# ------------------------------------------------------------------ train


def _train_config(cfg: Mapping) -> TrainConfig:
    return _typed(TrainConfig.from_dict, {**cfg["train"], "seed": cfg["seed"]})


def _train_one(arch: Architecture, ds, tcfg: TrainConfig, out: Path, stage: Path, resume_run: bool):
    state = out / f"{STATE_STEM}.json"
    if resume_run and state.exists():
        log.info("resuming from %s", state)
        return resume(out / STATE_STEM, ds, tcfg, stage)
    return train(arch, ds, tcfg, stage)


def cmd_train(cfg: dict) -> Path:
    ds = load_dataset(_require(cfg, "dataset", "a dataset"))
    arch = _typed(Architecture.from_dict, cfg["architecture"])
    tcfg = _train_config(cfg)
    out = Path(cfg["out"])
    with staged(out) as stage:
        res = _train_one(arch, ds, tcfg, out, stage, bool(cfg["resume"]))
        _write_resolved(stage, cfg)
    log.info("best epoch %d of %d", res.history.best_epoch, len(res.history.records))
    return out / BEST_STEM


# ------------------------------------------------------------------ eval


def _classical_chunk(args):
    samples, normalization, params = args
    return classical_predictions(samples, normalization, params)


def _classical(samples, normalization: str, params: LsqParams, jobs: int):
    if jobs <= 1 or len(samples) < 2:
        return classical_predictions(samples, normalization, params)
    parts = np.array_split(np.arange(len(samples)), jobs)
    chunks = [([samples[i] for i in idx], normalization, params) for idx in parts if len(idx)]
    preds = _pool_map(_classical_chunk, chunks, jobs)
    first = preds[0]
    for name in ("t1_score", "t2_index", "t3_loss"):
        setattr(first, name, np.concatenate([getattr(p, name) for p in preds]))
    return first


class _EvalContext:
    """Splits and calibration windows shared by every method under evaluation."""

    def __init__(self, cfg: Mapping) -> None:
        self.cfg = cfg
        self.ds = load_dataset(_require(cfg, "dataset", "a dataset"))
        self.test = self.ds.subset("test")
        if not self.test:
            raise DataError(f"test split of {cfg['dataset']} is empty; nothing to evaluate")
        self.val = self.ds.subset("val")
        if self.ds.spec is None:
            raise DataError(f"{cfg['dataset']} manifest lacks the generator spec needed for calibration windows")
        spec = _typed(CorpusSpec.from_dict, self.ds.spec)
        self.cal = calibration_negatives(spec, cfg["seed"], cfg["calibration_per_bucket"], jobs=cfg["jobs"])
        self.lsq = _typed(LsqParams, **{"half_window": 8, **cfg["lsq"]})

    def report(self, predict: Callable):
        val_neg = negative_scores(predict(self.val), self.val) if self.val else np.zeros(0)
        return evaluate(
            predict(self.test),
            self.test,
            val_neg_scores=val_neg if len(val_neg) >= MIN_NEGATIVES else None,
            sample_spacing_m=self.ds.sample_spacing_m,
            far=self.cfg["far"],
            bucket_neg_scores=bucket_negative_scores(predict(self.cal), self.cal),
        )

    def model_report(self, model):
        return self.report(lambda s: model_predictions(model, s))

    def classical_report(self):
        return self.report(lambda s: _classical(s, self.ds.normalization, self.lsq, self.cfg["jobs"]))


def _load_model_file(stem: Path):
    manifest = checkpoint_paths(stem)[0]
    if not manifest.exists():
        raise DataError(f"model checkpoint not found: {manifest} (run 'otdrmtl train' first)")
    return load_model(stem)


def cmd_eval(cfg: dict) -> list[Path]:
    model_stem = _require(cfg, "model", "a trained model checkpoint")
    ctx = _EvalContext(cfg)
    reports = [ctx.model_report(_load_model_file(model_stem))]
    if cfg["classical"]:
        reports.append(ctx.classical_report())
    out = Path(cfg["out"])
    with staged(out) as stage:
        for r in reports:
            write_report(r, stage)
        if len(reports) > 1:
            atomic_write_text(stage / "eval.table.csv", table_csv(reports))
        _write_resolved(stage, cfg)
    return [out / f"{r.method}.report.json" for r in reports]


# ------------------------------------------------------------------ compare


def cmd_compare(cfg: dict) -> Path:
    kinds = cfg["kinds"]
    bad = [k for k in kinds if k not in ARCH_KINDS]
    if bad or not kinds:
        raise ConfigError(f"kinds must be a non-empty subset of {ARCH_KINDS}, got {kinds}")
    tcfg = _train_config(cfg)
    ctx = _EvalContext(cfg)
    out = Path(cfg["out"])
    with staged(out) as stage:
        reports = []
        for kind in kinds:
            if kind in cfg["models"]:
                model = _load_model_file(Path(cfg["models"][kind]))
                if model.arch.kind != kind:
                    raise DataError(f"{cfg['models'][kind]} holds a {model.arch.kind}, not a {kind}")
            else:
                arch = _typed(Architecture.from_dict, {**cfg["architecture"], "kind": kind})
                log.info("training %s", kind)
                model = train(arch, ctx.ds, tcfg, stage / kind).model
            reports.append(ctx.model_report(model))
        if cfg["classical"]:
            reports.append(ctx.classical_report())
        for r in reports:
            write_report(r, stage / "reports")
        atomic_write_text(stage / "comparison.table.csv", table_csv(reports))
        lead = reports[0]
        summary = {
            "methods": [r.method for r in reports],
            "primary_metrics": {r.method: r.primary_metrics() for r in reports},
            "tasks_matched_or_beaten": {r.method: tasks_won(lead, r) for r in reports[1:] if r.t4 is not None},
            "detection_vs_snr": {r.method: dict(zip(("snr_db", "probability"), r.detection_curve())) for r in reports},
            "reports": {r.method: r.to_dict() for r in reports},
        }
        atomic_write_text(stage / "comparison.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
        _write_resolved(stage, cfg)
    return out / "comparison.table.csv"


# ------------------------------------------------------------------ plot


def cmd_plot(cfg: dict) -> list[Path]:
    if not cfg["reports"]:
        raise ConfigError("plot needs at least one report: set 'reports' or pass --reports")
    reports = [read_report(p) for p in cfg["reports"]]
    out = Path(cfg["out"])
    with staged(out) as stage:
        written = plot_reports(reports, stage)
        _write_resolved(stage, cfg)
    return [out / p.name for p in written]


COMMANDS = {
    "simulate": cmd_simulate,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


# ------------------------------------------------------------------ argparse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otdrmtl", description="Synthetic OTDR fault diagnosis with a multitask BiLSTM-CNN.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON config file; command-line flags override its values")
        p.add_argument("--seed", type=int, help="global seed (default 0)")
        p.add_argument("--out", help=f"output directory (default ./otdrmtl-{name})")
        p.add_argument("--jobs", type=int, help="worker processes for simulation and evaluation (default 1)")
        return p

    p = add("simulate", "Write synthetic traces as CSV + JSON pairs.")
    p.add_argument("--preset", help=f"link geometry preset ({', '.join(sorted(PRESETS))}); 'none' draws random links")
    p.add_argument("--count", type=int, help="number of traces (default 1)")
    p.add_argument("--snr", type=float, dest="snr_db", help="target SNR in dB (default 25)")

    p = add("dataset", "Build a labelled window corpus.")
    p.add_argument("--count", type=int, help="number of windows (default 6000)")
    p.add_argument("--name", help="file stem of the corpus (default 'corpus')")

    p = add("train", "Train one architecture on a corpus.")
    p.add_argument("--dataset", help="corpus path stem")
    p.add_argument("--kind", choices=ARCH_KINDS, help="architecture (default MultitaskBiLstmCnn)")
    p.add_argument("--max-epochs", type=int, help="epoch budget; caps patience at max-epochs - 1")
    p.add_argument("--resume", action="store_const", const=True, help="continue from OUT/train_state if present")

    p = add("eval", "Evaluate a trained model on the test split.")
    p.add_argument("--dataset", help="corpus path stem")
    p.add_argument("--model", help="model checkpoint stem, e.g. OUT/model_best")
    p.add_argument("--classical", action="store_const", const=True, help="also evaluate the two-point/LSQ detector")

    p = add("compare", "Train or load all architectures and produce one comparison table.")
    p.add_argument("--dataset", help="corpus path stem")
    p.add_argument("--max-epochs", type=int, help="epoch budget per architecture")
    p.add_argument("--classical", action="store_const", const=True, help="add the two-point/LSQ detector row")

    p = add("plot", "Render SVG figures and CSV curves from report files.")
    p.add_argument("--reports", nargs="+", help="*.report.json files; the first neural one drives ROC and overlay")
    return parser


def _overrides(args: argparse.Namespace, file_cfg: Mapping) -> dict:
    skip = {"command", "config", "kind", "max_epochs", "count", "preset"}
    ov = {k: v for k, v in vars(args).items() if k not in skip}
    cmd = args.command
    if getattr(args, "preset", None) is not None:
        ov["preset"] = args.preset
    if getattr(args, "count", None) is not None:
        if cmd == "dataset":
            ov["corpus"] = {**DEFAULTS["dataset"]["corpus"], **file_cfg.get("corpus", {}), "count": args.count}
        else:
            ov["count"] = args.count
    if getattr(args, "kind", None) is not None:
        ov["architecture"] = {**file_cfg.get("architecture", {}), "kind": args.kind}
    if getattr(args, "max_epochs", None) is not None:
        t = {**_TRAIN_DEFAULTS, **file_cfg.get("train", {})}
        t["max_epochs"] = args.max_epochs
        t["patience"] = max(0, min(t["patience"], args.max_epochs - 1))
        ov["train"] = t
    return ov


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        file_cfg = _read_config(args.config)
        cfg = resolve_config(args.command, file_cfg, _overrides(args, file_cfg))
        COMMANDS[args.command](cfg)
    except OtdrError as exc:
        print(f"otdrmtl {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"otdrmtl {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
