"""Pre-processing -> LSTM training -> post-processing, for all model variants."""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from ._accel import backend
from .benchmarks import BENCHMARK_TAGS, DISPLAY_NAMES, run_benchmark
from .core_types import ForecastResult, SalesSeries
from .evaluation import MetricReport, score_forecasts
from .hpo import HpoResult, SearchSpace, bayes_optimize
from .ingestion import SeriesSet, SyntheticSpec, generate_synthetic, load_csv
from .lstm.model import LstmParams, save_checkpoint
from .lstm.train import TrainConfig, TrainResult, build_sequences, predict_final, train_epochs
from .preprocess import (DEFAULT_GAMMA, DEFAULT_LOOKBACK, GroupAssignment, cluster_items, domain_grouping,
                         forward_fill, preprocess_set)
from .windowing import FeatureLayout, TrainingSet, build_training_set, default_input_window, mean_scale, \
    postprocess_forecast

log = logging.getLogger(__name__)

VARIANTS = ("ALL", "GROUP", "FEATURE", "CLUSTER")
WORKERS_ENV = "DEMANDLSTM_WORKERS"


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


@dataclass
class PipelineConfig:
    """Everything a run needs. Exactly one of ``data`` / ``synthetic`` is set.

    ``data`` is a mapping with keys ``sales`` and optionally ``meta`` and
    ``calendar`` (file paths).
    """

    data: Optional[Dict[str, str]] = None
    synthetic: Optional[SyntheticSpec] = None
    horizon: int = 10
    input_window: Optional[int] = None
    gamma: float = DEFAULT_GAMMA
    lookback_days: int = DEFAULT_LOOKBACK
    head_is_g1: bool = True
    variants: Tuple[str, ...] = ("ALL",)
    train: TrainConfig = field(default_factory=TrainConfig)
    hpo_budget: int = 0
    k_range: Tuple[int, int] = (2, 5)
    cluster_restarts: int = 25
    benchmarks: Tuple[str, ...] = BENCHMARK_TAGS
    output_dir: str = "out"
    seed: int = 0

    @property
    def n(self) -> int:
        return self.input_window if self.input_window is not None else default_input_window(self.horizon)

    def validate(self) -> "PipelineConfig":
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("exactly one of 'data' and 'synthetic' must be given")
        if self.data is not None and "sales" not in self.data:
            raise ConfigError("data.sales path is required")
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon!r}")
        if self.input_window is not None and self.input_window < 1:
            raise ConfigError("input_window must be positive")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}; choose from {VARIANTS}")
        bad = [b for b in self.benchmarks if b not in BENCHMARK_TAGS]
        if bad:
            raise ConfigError(f"unknown benchmarks {bad}; choose from {BENCHMARK_TAGS}")
        if "CLUSTER" in self.variants:
            lo, hi = self.k_range
            if not 2 <= lo <= hi:
                raise ConfigError("CLUSTER needs k_range with 2 <= low <= high")
        if self.hpo_budget and self.hpo_budget < 5:
            raise ConfigError("hpo_budget must be 0 (off) or at least 5")
        problems = self.train.violations()
        if problems and not self.hpo_budget:
            raise ConfigError("train: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
            "horizon": self.horizon,
            "input_window": self.input_window,
            "gamma": self.gamma,
            "lookback_days": self.lookback_days,
            "head_is_g1": self.head_is_g1,
            "variants": list(self.variants),
            "train": self.train.to_dict(),
            "hpo_budget": self.hpo_budget,
            "k_range": list(self.k_range),
            "cluster_restarts": self.cluster_restarts,
            "benchmarks": list(self.benchmarks),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if d.get("synthetic") is not None:
            d["synthetic"] = SyntheticSpec.from_dict(d["synthetic"])
        if d.get("train") is not None:
            d["train"] = TrainConfig.from_dict(d["train"])
        for key in ("variants", "k_range", "benchmarks"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**{k: v for k, v in d.items() if v is not None or k in ("data", "synthetic", "input_window")})

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_series(cfg: PipelineConfig) -> SeriesSet:
    if cfg.synthetic is not None:
        return generate_synthetic(cfg.synthetic)
    d = cfg.data
    return load_csv(d["sales"], d.get("calendar"), d.get("meta"))


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# data preparation

@dataclass
class PreparedData:
    """Training region (cleaned), held-out actuals and the domain grouping."""

    raw: SeriesSet
    train_set: SeriesSet
    actuals: Dict[str, np.ndarray]
    groups: GroupAssignment
    horizon: int
    n: int

    @property
    def origin_date(self) -> dt.date:
        return self.train_set.start_date + dt.timedelta(days=self.train_set.n_days - 1)


def prepare(series_set: SeriesSet, cfg: PipelineConfig) -> PreparedData:
    """Split off the last ``horizon`` days, repair and impute the rest, group items.

    Nothing computed here reads the held-out days except ``actuals``.
    """
    M = cfg.horizon
    K = series_set.n_days
    if K <= M:
        raise ConfigError(f"series of {K} days cannot hold out a horizon of {M}")
    train_region = series_set.truncate(K - M)
    cleaned = preprocess_set(train_region, cfg.gamma, cfg.lookback_days)
    actuals = {}
    for s in series_set.series:
        filled = s if not s.missing_mask.any() else (forward_fill(s) if (~s.missing_mask).any() else
                                                      s.replace(missing_mask=np.zeros(len(s), bool)))
        actuals[s.item_id] = filled.values[K - M:].copy()
    groups = domain_grouping(cleaned, head_is_g1=cfg.head_is_g1) if len(cleaned) >= 3 else \
        GroupAssignment({i: "G3" for i in cleaned.item_ids}, "domain")
    return PreparedData(series_set, cleaned, actuals, groups, M, cfg.n)


# ---------------------------------------------------------------------------
# LSTM variants

@dataclass
class PartitionModel:
    label: str
    item_ids: List[str]
    result: Optional[TrainResult]
    layout: Optional[FeatureLayout]
    hpo: Optional[HpoResult] = None
    skipped: str = ""


@dataclass
class VariantOutput:
    variant: str
    model_tag: str
    forecasts: Dict[str, np.ndarray]
    report: MetricReport
    report_clamped: MetricReport
    models: List[PartitionModel]
    feature_dimension: int
    excluded: List[str]


def _training_set(prep: PreparedData, item_ids: Sequence[str], layout: FeatureLayout,
                  extra: Optional[Dict[str, object]]) -> TrainingSet:
    sub = prep.train_set.subset(item_ids)
    scaled = [mean_scale(s) for s in sub.series]
    return build_training_set(scaled, sub.metas, sub.calendar, prep.n, prep.horizon, layout, extra)


def validation_mmape(params: LstmParams, data) -> float:
    """Mean mMAPE of the reserved validation windows on the original scale."""
    from .evaluation import mmape

    raw = predict_final(params, data, "validation")
    pred = postprocess_forecast(raw, data.val_local_mean, data.scale_factor)
    rows = data.val_out[np.arange(len(data.val_len)), data.val_len - 1]
    actual = postprocess_forecast(data.targets[rows], data.val_local_mean, data.scale_factor)
    return float(np.mean([mmape(p, a) for p, a in zip(pred, actual)]))


def tune(ts: TrainingSet, cfg: PipelineConfig, seed: int) -> Tuple[TrainConfig, HpoResult]:
    """Bayesian search over the default hyperparameter space scored by validation mMAPE."""
    base = cfg.train
    data = build_sequences(ts, base.seq_len, base.seq_stride)
    space = SearchSpace.default().for_optimizer(base.optimizer)

    def objective(point):
        tc = replace(base, **point)
        res = train_epochs(data, tc)
        return validation_mmape(res.params, data)

    result = bayes_optimize(space, objective, cfg.hpo_budget, seed)
    return replace(base, **result.best.params), result


def train_partition(prep: PreparedData, label: str, item_ids: Sequence[str], cfg: PipelineConfig,
                    layout: FeatureLayout, extra=None, seed_offset: int = 0) -> Tuple[PartitionModel, Dict[str, np.ndarray]]:
    ts = _training_set(prep, item_ids, layout, extra)
    if not ts.items:
        log.warning("partition %s has no trainable series; skipped", label)
        return PartitionModel(label, list(item_ids), None, layout, skipped="no trainable series"), {}
    tc = replace(cfg.train, rng_seed=cfg.train.rng_seed + 1000 * cfg.seed + seed_offset)
    hpo_res = None
    if cfg.hpo_budget:
        tc, hpo_res = tune(ts, replace(cfg, train=tc), cfg.seed + seed_offset)
    data = build_sequences(ts, tc.seq_len, tc.seq_stride)
    result = train_epochs(data, tc)
    raw = predict_final(result.params, data, "forecast")
    fc = postprocess_forecast(raw, data.fc_local_mean, data.scale_factor)
    forecasts = {iid: fc[k] for k, iid in enumerate(data.item_ids)}
    return PartitionModel(label, [it.item_id for it in ts.items], result, layout, hpo_res), forecasts


def lstm_tag(variant: str, cfg: PipelineConfig) -> str:
    hp = "Bayesian" if cfg.hpo_budget else "Fixed"
    opt = "COCOB" if cfg.train.optimizer.lower() == "cocob" else "Adam"
    return f"LSTM.{variant} LSTM-{cfg.train.scheme}/{hp}/{opt}"


def run_variant(series_set_or_prep, cfg: PipelineConfig, variant: str = "ALL") -> VariantOutput:
    """Train the model(s) of one variant and score them on the held-out horizon."""
    prep = series_set_or_prep if isinstance(series_set_or_prep, PreparedData) else prepare(series_set_or_prep, cfg)
    subcats = prep.train_set.subcategories()
    all_ids = prep.train_set.item_ids
    if variant == "ALL":
        partitions = [("All", all_ids, None)]
        layout = FeatureLayout(subcats)
    elif variant == "GROUP":
        layout = FeatureLayout(subcats)
        partitions = [(lab, ids, None) for lab, ids in prep.groups.groups().items()]
    elif variant == "FEATURE":
        labels = ["G1", "G2", "G3"]
        layout = FeatureLayout(subcats, labels)
        partitions = [("All", all_ids, {i: prep.groups.labels[i] for i in all_ids})]
    elif variant == "CLUSTER":
        lo, hi = cfg.k_range
        clusters = cluster_items(prep.train_set, range(lo, hi + 1), cfg.seed, cfg.cluster_restarts)
        layout = FeatureLayout(subcats)
        partitions = [(f"C{lab}", ids, None) for lab, ids in clusters.groups().items()]
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    models, forecasts = [], {}
    for k, (label, ids, extra) in enumerate(partitions):
        model, fc = train_partition(prep, label, ids, cfg, layout, extra, seed_offset=k)
        models.append(model)
        forecasts.update(fc)
    excluded = [i for i in all_ids if i not in forecasts]
    tag = lstm_tag(variant, cfg)
    note = f"{len(excluded)} items too short for the LSTM" if excluded else ""
    actual = {i: prep.actuals[i] for i in forecasts}
    rep = score_forecasts(forecasts, actual, prep.groups, tag, False, len(excluded), note)
    rep_c = score_forecasts(forecasts, actual, prep.groups, tag, True, len(excluded), note)
    return VariantOutput(variant, tag, forecasts, rep, rep_c, models, layout.dimension, excluded)


# ---------------------------------------------------------------------------
# benchmarks

@dataclass
class BenchmarkOutput:
    tag: str
    model_tag: str
    forecasts: Dict[str, np.ndarray]
    report: MetricReport
    report_clamped: MetricReport
    failures: Dict[str, str]


def run_benchmarks(series_set_or_prep, cfg: PipelineConfig) -> List[BenchmarkOutput]:
    """Every enabled benchmark, scored on the same held-out horizon as the LSTMs."""
    prep = series_set_or_prep if isinstance(series_set_or_prep, PreparedData) else prepare(series_set_or_prep, cfg)
    series = prep.train_set.series
    outputs = []
    for tag in cfg.benchmarks:
        def one(s: SalesSeries):
            try:
                return s.item_id, run_benchmark(tag, s.values, prep.horizon), None
            except Exception as exc:
                return s.item_id, None, str(exc)

        with ThreadPoolExecutor(max_workers=workers()) as pool:
            results = list(pool.map(one, series))
        fc = {iid: f for iid, f, err in results if f is not None}
        failures = {iid: err for iid, f, err in results if f is None}
        for iid, err in failures.items():
            log.warning("benchmark %s failed on %s: %s", tag, iid, err)
        name = DISPLAY_NAMES[tag]
        note = f"{len(failures)} items failed" if failures else ""
        actual = {i: prep.actuals[i] for i in fc}
        rep = score_forecasts(fc, actual, prep.groups, name, False, len(failures), note)
        rep_c = score_forecasts(fc, actual, prep.groups, name, True, len(failures), note)
        outputs.append(BenchmarkOutput(tag, name, fc, rep, rep_c, failures))
    return outputs


# ---------------------------------------------------------------------------
# artifacts

def forecast_results(forecasts: Dict[str, np.ndarray], origin: dt.date, model_tag: str,
                     clamp: bool = True) -> List[ForecastResult]:
    out = []
    for iid in sorted(forecasts):
        f = np.maximum(forecasts[iid], 0.0) if clamp else forecasts[iid]
        out.append(ForecastResult(iid, origin, f, model_tag))
    return out


def write_forecasts_csv(results: Sequence[ForecastResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "origin_date", "h", "forecast", "model_tag"])
        for r in results:
            for h, v in enumerate(r.point_forecasts, start=1):
                w.writerow([r.item_id, r.origin_date.isoformat(), h, repr(float(v)), r.model_tag])


def read_forecasts_csv(path) -> Dict[str, Dict[str, np.ndarray]]:
    """``{model_tag: {item_id: forecast vector}}``."""
    rows: Dict[str, Dict[str, Dict[int, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["model_tag"], {}).setdefault(row["item_id"], {})[int(row["h"])] = float(row["forecast"])
    out = {}
    for tag, items in rows.items():
        out[tag] = {iid: np.array([hs[h] for h in sorted(hs)]) for iid, hs in items.items()}
    return out


def manifest(cfg: PipelineConfig) -> dict:
    import numba
    import scipy

    return {
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {
            "demandlstm": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
        "kernel_backend": backend(),
    }


def save_models(variant_out: VariantOutput, directory: Path, cfg: PipelineConfig) -> List[Path]:
    paths = []
    for pm in variant_out.models:
        if pm.result is None:
            continue
        p = directory / f"lstm_{variant_out.variant.lower()}_{pm.label}.ckpt"
        meta = {
            "variant": variant_out.variant,
            "partition": pm.label,
            "items": pm.item_ids,
            "layout": pm.layout.to_dict(),
            "n": cfg.n,
            "m": cfg.horizon,
            "train": pm.result.config.to_dict(),
            "best_epoch": pm.result.best_epoch,
        }
        save_checkpoint(p, pm.result.params, meta)
        paths.append(p)
    return paths


@dataclass
class RunOutput:
    variants: List[VariantOutput]
    benchmarks: List[BenchmarkOutput]
    prepared: PreparedData
    files: Dict[str, Path]
    seconds: float

    def reports(self, clamped: bool = False) -> List[MetricReport]:
        pick = (lambda o: o.report_clamped) if clamped else (lambda o: o.report)
        return [pick(v) for v in self.variants] + [pick(b) for b in self.benchmarks]


def run_end_to_end(cfg: PipelineConfig, series_set: Optional[SeriesSet] = None) -> RunOutput:
    """Full run; writes forecasts, reports, checkpoints and a manifest under ``output_dir``."""
    from .evaluation import format_table, write_per_item_csv, write_report_csv

    t0 = time.perf_counter()
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def stage(name, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            raise StageError(name, exc) from exc

    data = series_set if series_set is not None else stage("load", load_series, cfg)
    prep = stage("preprocess", prepare, data, cfg)
    prep.groups.to_csv(out_dir / "groups.csv")
    variants = [stage(f"train:{v}", run_variant, prep, cfg, v) for v in cfg.variants]
    benches = stage("benchmarks", run_benchmarks, prep, cfg)

    files: Dict[str, Path] = {"groups": out_dir / "groups.csv"}
    results = []
    for v in variants:
        results.extend(forecast_results(v.forecasts, prep.origin_date, v.model_tag))
        for k, path in enumerate(save_models(v, out_dir, cfg)):
            files[f"checkpoint:{v.variant}:{k}"] = path
        for pm in v.models:
            if pm.hpo is not None:
                from .hpo import write_history

                hp = out_dir / f"hpo_{v.variant.lower()}_{pm.label}.csv"
                write_history(pm.hpo, hp)
                files[f"hpo:{v.variant}:{pm.label}"] = hp
    for b in benches:
        results.extend(forecast_results(b.forecasts, prep.origin_date, b.model_tag))
    files["forecasts"] = out_dir / "forecasts.csv"
    stage("write", write_forecasts_csv, results, files["forecasts"])

    out = RunOutput(variants, benches, prep, files, 0.0)
    reports = out.reports(False) + out.reports(True)
    flags = [False] * (len(reports) // 2) + [True] * (len(reports) // 2)
    files["report_csv"] = out_dir / "report.csv"
    write_report_csv(reports, files["report_csv"], flags)
    files["per_item_csv"] = out_dir / "per_item_mmape.csv"
    write_per_item_csv(out.reports(False), files["per_item_csv"])
    table = ("Unclamped forecasts\n" + format_table(out.reports(False))
             + "\n\nForecasts clamped at zero\n" + format_table(out.reports(True))
             + "\n\n* simplified substitute for the full model family\n")
    files["report_txt"] = out_dir / "report.txt"
    files["report_txt"].write_text(table)
    files["manifest"] = out_dir / "manifest.json"
    files["manifest"].write_text(json.dumps(manifest(cfg), indent=2, sort_keys=True))
    out.seconds = time.perf_counter() - t0
    return out


def forecast_from_checkpoint(prep: PreparedData, params: LstmParams, meta: dict) -> Dict[str, np.ndarray]:
    """Re-create a partition's windows from checkpoint metadata and forecast the horizon."""
    if meta["n"] != prep.n or meta["m"] != prep.horizon:
        raise ConfigError(f"checkpoint was trained with n={meta['n']}, m={meta['m']}; "
                          f"data prepared with n={prep.n}, m={prep.horizon}")
    layout = FeatureLayout(meta["layout"]["subcategories"], meta["layout"]["extra_labels"])
    ids = [i for i in meta["items"] if i in set(prep.train_set.item_ids)]
    extra = {i: prep.groups.labels[i] for i in ids} if layout.extra_labels else None
    ts = _training_set(prep, ids, layout, extra)
    tc = TrainConfig.from_dict(meta["train"])
    data = build_sequences(ts, tc.seq_len, tc.seq_stride)
    raw = predict_final(params, data, "forecast")
    fc = postprocess_forecast(raw, data.fc_local_mean, data.scale_factor)
    return {iid: fc[k] for k, iid in enumerate(data.item_ids)}
