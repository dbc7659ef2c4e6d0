"""Command-line entry point: ``demandlstm <subcommand> [options]``.

Options mirror :class:`PipelineConfig`; values from ``--config`` (YAML or
JSON) take precedence over command-line flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .benchmarks import BENCHMARK_TAGS
from .evaluation import format_table, score_forecasts, write_report_csv
from .ingestion import SyntheticSpec, generate_synthetic, write_csv
from .lstm.model import load_checkpoint
from .pipeline import (VARIANTS, ConfigError, PipelineConfig, StageError, forecast_from_checkpoint,
                       forecast_results, load_series, prepare, read_forecasts_csv, run_end_to_end,
                       run_variant, save_models, tune, _training_set, write_forecasts_csv)
from .preprocess import cluster_features, feature_matrix, TsFeatureVector
from .windowing import FeatureLayout, dump_training_set

log = logging.getLogger("demandlstm")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON file; its keys override flags")
    p.add_argument("--sales", help="sales CSV (item_id,date,sales)")
    p.add_argument("--meta", help="metadata CSV (item_id,subcategory,category,department,super_department)")
    p.add_argument("--calendar", help="calendar CSV (date,holiday)")
    p.add_argument("--synthetic", action="store_true", help="use generated data (see the synth flags)")
    p.add_argument("--horizon", type=int)
    p.add_argument("--input-window", type=int)
    p.add_argument("--gamma", type=float, help="fake-zero threshold")
    p.add_argument("--variant", action="append", choices=VARIANTS, help="repeatable")
    p.add_argument("--scheme", choices=("LS1", "LS2"))
    p.add_argument("--optimizer", choices=("adam", "cocob"))
    p.add_argument("--cell-dim", type=int)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--hpo-budget", type=int)
    p.add_argument("--k-range", type=int, nargs=2, metavar=("LOW", "HIGH"))
    p.add_argument("--benchmarks", nargs="*", choices=BENCHMARK_TAGS)
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    _add_synth_flags(p)


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic data")
    g.add_argument("--n-items", type=int)
    g.add_argument("--n-days", type=int)
    g.add_argument("--n-subcategories", type=int)
    g.add_argument("--shared-strength", type=float)
    g.add_argument("--zero-inflation", type=float)
    g.add_argument("--noise-std", type=float)


BUNDLED = Path(__file__).with_name("configs")


def resolve_config_path(name) -> Path:
    """A filesystem path, or the stem of a bundled config such as ``synthetic``."""
    p = Path(name)
    if p.exists():
        return p
    bundled = BUNDLED / f"{name}.yaml"
    if bundled.exists():
        return bundled
    raise ConfigError(f"config file not found: {name}")


def read_config_file(path) -> dict:
    text = resolve_config_path(path).read_text()
    data = yaml.safe_load(text) if text.strip() else {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then flags, then the config file."""
    d = PipelineConfig().to_dict()
    d["data"] = None
    synth = {}
    pairs = {"n_items": "n_items", "n_days": "n_days", "n_subcategories": "n_subcategories",
             "shared_strength": "shared_pattern_strength", "zero_inflation": "zero_inflation_probability",
             "noise_std": "noise_std"}
    for flag, key in pairs.items():
        if getattr(args, flag, None) is not None:
            synth[key] = getattr(args, flag)
    if getattr(args, "sales", None):
        d["data"] = {"sales": args.sales}
        if args.meta:
            d["data"]["meta"] = args.meta
        if args.calendar:
            d["data"]["calendar"] = args.calendar
    elif getattr(args, "synthetic", False) or synth:
        d["synthetic"] = synth
    simple = {"horizon": "horizon", "input_window": "input_window", "gamma": "gamma",
              "hpo_budget": "hpo_budget", "out": "output_dir", "seed": "seed"}
    for flag, key in simple.items():
        if getattr(args, flag, None) is not None:
            d[key] = getattr(args, flag)
    if getattr(args, "variant", None):
        d["variants"] = args.variant
    if getattr(args, "k_range", None):
        d["k_range"] = args.k_range
    if getattr(args, "benchmarks", None) is not None:
        d["benchmarks"] = args.benchmarks
    train_flags = {"scheme": "scheme", "optimizer": "optimizer", "cell_dim": "cell_dim",
                   "minibatch": "minibatch_size", "lr": "learning_rate", "epochs": "max_epochs",
                   "noise": "gaussian_noise_std", "l2": "l2_weight", "seq_len": "seq_len"}
    for flag, key in train_flags.items():
        if getattr(args, flag, None) is not None:
            d["train"][key] = getattr(args, flag)
    if getattr(args, "config", None):
        file_cfg = read_config_file(args.config)
        for key, val in file_cfg.items():
            if key == "train" and isinstance(val, dict):
                d["train"].update(val)
            elif key == "synthetic" and isinstance(val, dict):
                d["synthetic"] = {**(d.get("synthetic") or {}), **val}
                if "data" not in file_cfg:
                    d["data"] = None
            elif key == "data" and val is not None:
                d["data"] = val
                if "synthetic" not in file_cfg:
                    d["synthetic"] = None
            else:
                d[key] = val
    if "seed" in d and d.get("synthetic") is not None and "rng_seed" not in d["synthetic"]:
        d["synthetic"]["rng_seed"] = d["seed"]
    try:
        cfg = PipelineConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    d = read_config_file(args.config) if args.config else {}
    spec_d = dict(d.get("synthetic") or {})
    pairs = {"n_items": "n_items", "n_days": "n_days", "n_subcategories": "n_subcategories",
             "shared_strength": "shared_pattern_strength", "zero_inflation": "zero_inflation_probability",
             "noise_std": "noise_std"}
    for flag, key in pairs.items():
        if getattr(args, flag) is not None and key not in spec_d:
            spec_d[key] = getattr(args, flag)
    if args.seed is not None and "rng_seed" not in spec_d:
        spec_d["rng_seed"] = args.seed
    spec = SyntheticSpec.from_dict(spec_d)
    paths = write_csv(generate_synthetic(spec), args.out or d.get("output_dir", "data"))
    for k, p in paths.items():
        print(f"{k}: {p}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = build_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(load_series(cfg), cfg)
    paths = write_csv(prep.train_set, out, prefix="clean_")
    prep.groups.to_csv(out / "groups_domain.csv")
    feats = feature_matrix(prep.train_set)
    with open(out / "features.csv", "w") as fh:
        fh.write("item_id," + ",".join(TsFeatureVector.names()) + "\n")
        for iid, row in zip(prep.train_set.item_ids, feats):
            fh.write(iid + "," + ",".join(repr(float(v)) for v in row) + "\n")
    lo, hi = cfg.k_range
    if len(prep.train_set) >= 2 * hi:
        sel = cluster_features(feats, prep.train_set.item_ids, range(lo, hi + 1), cfg.seed, cfg.cluster_restarts)
        sel.assignment.to_csv(out / "groups_cluster.csv")
        print(f"clusters: k={sel.k} silhouettes={ {k: round(v, 3) for k, v in sel.silhouettes.items()} }")
    if args.dump_windows:
        ts = _training_set(prep, prep.train_set.item_ids, FeatureLayout(prep.train_set.subcategories()), None)
        dump_training_set(ts, out / "windows.csv")
    print(f"wrote cleaned training region to {paths['sales']}")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(load_series(cfg), cfg)
    summary = {}
    for v in cfg.variants:
        res = run_variant(prep, cfg, v)
        paths = save_models(res, out, cfg)
        summary[v] = {
            "checkpoints": [str(p) for p in paths],
            "partitions": {pm.label: {
                "items": len(pm.item_ids),
                "skipped": pm.skipped,
                "train_loss": pm.result.train_loss if pm.result else None,
                "validation_loss": pm.result.validation_loss if pm.result else None,
                "best_epoch": pm.result.best_epoch if pm.result else None,
            } for pm in res.models},
        }
        print(f"{res.model_tag}: {len(paths)} model(s)")
    (out / "training_summary.json").write_text(json.dumps(summary, indent=2))
    return 0


def cmd_forecast(args) -> int:
    cfg = build_config(args)
    prep = prepare(load_series(cfg), cfg)
    ckpts = sorted(Path(args.models).glob("*.ckpt"))
    if not ckpts:
        raise ConfigError(f"no checkpoints in {args.models}")
    results = []
    by_variant = {}
    for path in ckpts:
        params, meta = load_checkpoint(path)
        by_variant.setdefault(meta["variant"], {}).update(forecast_from_checkpoint(prep, params, meta))
    for variant, fc in sorted(by_variant.items()):
        tag = f"LSTM.{variant}"
        results.extend(forecast_results(fc, prep.origin_date, tag))
    path = Path(args.output or Path(cfg.output_dir) / "forecasts.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_forecasts_csv(results, path)
    print(f"wrote {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = build_config(args)
    prep = prepare(load_series(cfg), cfg)
    forecasts = read_forecasts_csv(args.forecasts)
    reports = []
    for tag, fc in forecasts.items():
        bad = [i for i in fc if i not in prep.actuals]
        if bad:
            raise ConfigError(f"forecasts for unknown items: {bad[:5]}")
        reports.append(score_forecasts(fc, {i: prep.actuals[i] for i in fc}, prep.groups, tag))
    print(format_table(reports))
    if args.report:
        write_report_csv(reports, args.report)
    return 0


def cmd_run(args) -> int:
    cfg = build_config(args)
    res = run_end_to_end(cfg)
    print(res.files["report_txt"].read_text())
    print(f"artifacts in {cfg.output_dir} ({res.seconds:.1f}s)")
    return 0


def cmd_hpo(args) -> int:
    from .hpo import write_history

    cfg = build_config(args)
    if not cfg.hpo_budget:
        cfg = replace(cfg, hpo_budget=30)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(load_series(cfg), cfg)
    ts = _training_set(prep, prep.train_set.item_ids, FeatureLayout(prep.train_set.subcategories()), None)
    best_cfg, result = tune(ts, cfg, cfg.seed)
    write_history(result, out / "trials.csv")
    (out / "best_config.json").write_text(json.dumps(best_cfg.to_dict(), indent=2))
    print(f"best validation mMAPE {result.best.objective:.4f} with {result.best.params}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demandlstm",
                                     description="Global LSTM demand forecasting with classical benchmarks.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset as CSV files")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    _add_synth_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="repair, impute, group; write cleaned data and groups")
    _add_common(p)
    p.add_argument("--dump-windows", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train LSTM variants and save checkpoints")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="forecast the held-out horizon from saved checkpoints")
    _add_common(p)
    p.add_argument("--models", required=True, help="directory with .ckpt files")
    p.add_argument("--output", help="forecast CSV path")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score a forecast CSV against the held-out days")
    _add_common(p)
    p.add_argument("--forecasts", required=True)
    p.add_argument("--report", help="write the report CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="end-to-end: preprocess, train, benchmarks, reports")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("hpo", help="Bayesian hyperparameter search for the global model")
    _add_common(p)
    p.set_defaults(func=cmd_hpo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
