import dataclasses
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from demandlstm.ingestion import SyntheticSpec, generate_synthetic
from demandlstm.lstm.model import load_checkpoint
from demandlstm.lstm.train import TrainConfig
from demandlstm.pipeline import (ConfigError, PipelineConfig, forecast_from_checkpoint, prepare,
                                 read_forecasts_csv, run_benchmarks, run_end_to_end, run_variant)
from demandlstm.windowing import FeatureLayout

from conftest import make_set

SMALL_TRAIN = TrainConfig(cell_dim=6, minibatch_size=16, learning_rate=1e-2, max_epochs=2)
VALID_TRAIN = TrainConfig(cell_dim=50, minibatch_size=60, max_epochs=5)


def small_spec(seed=0, n_items=15, n_days=70):
    return SyntheticSpec(n_items=n_items, n_days=n_days, n_subcategories=3, rng_seed=seed)


def small_cfg(tmp_path=None, **kw):
    base = dict(synthetic=small_spec(), horizon=5, train=SMALL_TRAIN, benchmarks=("naive", "snaive"),
                output_dir=str(tmp_path) if tmp_path else "out")
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def series():
    return generate_synthetic(small_spec())


@pytest.fixture(scope="module")
def prep(series):
    return prepare(series, small_cfg())


def test_horizon_zero_rejected():
    with pytest.raises(ConfigError, match="horizon"):
        small_cfg(horizon=0).validate()


@pytest.mark.parametrize("kw", [dict(synthetic=None), dict(variants=("BEST",)), dict(benchmarks=("prophet",)),
                                dict(variants=("CLUSTER",), k_range=(1, 3)), dict(hpo_budget=3),
                                dict(gamma=0.0)])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        small_cfg(**kw).validate()


def test_train_bounds_enforced_without_hpo():
    with pytest.raises(ConfigError, match="cell_dim"):
        small_cfg().validate()
    small_cfg(train=VALID_TRAIN).validate()


def test_config_dict_round_trip():
    cfg = small_cfg(variants=("ALL", "GROUP"), train=VALID_TRAIN)
    again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.digest() == cfg.digest()
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({**cfg.to_dict(), "colour": "red"})


def test_prepare_holds_out_last_days(series, prep):
    assert prep.train_set.n_days == series.n_days - 5
    for s in series.series:
        assert_array_equal(prep.actuals[s.item_id], s.values[-5:])
    assert set(prep.groups.labels) == set(series.item_ids)


def test_all_trains_one_model(prep):
    out = run_variant(prep, small_cfg(), "ALL")
    assert len(out.models) == 1
    assert set(out.forecasts) == set(prep.train_set.item_ids)
    assert all(f.shape == (5,) and np.all(np.isfinite(f)) for f in out.forecasts.values())
    assert out.model_tag.startswith("LSTM.ALL")


def test_group_trains_one_model_per_group(prep):
    out = run_variant(prep, small_cfg(), "GROUP")
    assert len(out.models) == len(prep.groups.groups()) <= 3
    assert sorted(m.label for m in out.models) == sorted(prep.groups.groups())


def test_feature_adds_three_dimensions(prep):
    a = run_variant(prep, small_cfg(), "ALL")
    f = run_variant(prep, small_cfg(), "FEATURE")
    assert f.feature_dimension == a.feature_dimension + 3
    assert len(f.models) == 1


def test_cluster_model_count_equals_k(prep):
    out = run_variant(prep, small_cfg(k_range=(2, 4), cluster_restarts=5), "CLUSTER")
    from demandlstm.preprocess import cluster_items

    k = len(cluster_items(prep.train_set, range(2, 5), 0, 5).groups())
    assert len(out.models) == k


def test_training_never_reads_test_region(series):
    cfg = small_cfg()
    rng = np.random.default_rng(7)
    corrupted = series.map_series(lambda s: s.replace(values=np.concatenate([s.values[:-5], rng.uniform(0, 1e4, 5)])))
    a = run_variant(prepare(series, cfg), cfg, "ALL")
    b = run_variant(prepare(corrupted, cfg), cfg, "ALL")
    assert_array_equal(a.models[0].result.params.data, b.models[0].result.params.data)
    for iid in a.forecasts:
        assert_array_equal(a.forecasts[iid], b.forecasts[iid])


def test_batch_and_single_item_forecasts_agree(prep):
    cfg = small_cfg()
    out = run_variant(prep, cfg, "ALL")
    pm = out.models[0]
    meta = {"n": prep.n, "m": prep.horizon, "layout": pm.layout.to_dict(), "items": pm.item_ids,
            "train": pm.result.config.to_dict()}
    batch = forecast_from_checkpoint(prep, pm.result.params, meta)
    for iid in pm.item_ids[:6]:
        one = forecast_from_checkpoint(prep, pm.result.params, {**meta, "items": [iid]})
        assert_allclose(one[iid], batch[iid], rtol=1e-12, atol=1e-12)
        assert_allclose(batch[iid], out.forecasts[iid], rtol=1e-12, atol=1e-12)


def test_checkpoint_horizon_mismatch(prep):
    meta = {"n": prep.n, "m": prep.horizon + 1, "layout": FeatureLayout([]).to_dict(), "items": [], "train": {}}
    with pytest.raises(ConfigError):
        forecast_from_checkpoint(prep, None, meta)


def periodic_set(n_items=6, n_days=49):
    week = np.array([4.0, 1, 6, 2, 8, 3, 5])
    return make_set([np.tile(week * (k + 1), n_days // 7) for k in range(n_items)])


def test_snaive_exact_on_periodic_data():
    cfg = small_cfg(benchmarks=("snaive",), horizon=7)
    (out,) = run_benchmarks(periodic_set(), cfg)
    assert out.report.mean == 0.0
    assert not out.failures


def test_naive_matches_snaive_period_one(monkeypatch, series):
    from demandlstm import benchmarks as bm

    cfg = small_cfg(benchmarks=("naive", "snaive"))
    monkeypatch.setitem(bm.BENCHMARKS, "snaive", lambda x, M: bm.forecast_snaive(x, M, period=1))
    naive, snaive = run_benchmarks(series, cfg)
    assert naive.report.per_item == snaive.report.per_item
    assert naive.report.aggregates == snaive.report.aggregates


def test_benchmark_failures_are_excluded_and_counted(series):
    cfg = small_cfg(benchmarks=("snaive",), horizon=5)
    short = series.truncate(10)  # 5 training days < period 7
    (out,) = run_benchmarks(short, cfg)
    assert len(out.failures) == len(series) and out.report.excluded == len(series)
    assert out.report.per_item == {}


def test_report_keys_subset_of_items(series):
    ids = set(series.item_ids)
    for out in run_benchmarks(series, small_cfg(benchmarks=("naive", "ewma", "ar"))):
        assert set(out.report.per_item) <= ids
        assert set(out.forecasts) <= ids


def test_end_to_end_artifacts_and_determinism(tmp_path):
    outs = []
    for k in range(2):
        cfg = small_cfg(tmp_path / f"r{k}", train=dataclasses.replace(VALID_TRAIN, minibatch_size=60),
                        variants=("ALL", "GROUP"))
        outs.append(run_end_to_end(cfg))
    a, b = outs
    assert (tmp_path / "r0" / "forecasts.csv").read_bytes() == (tmp_path / "r1" / "forecasts.csv").read_bytes()
    for key in ("forecasts", "report_csv", "report_txt", "per_item_csv", "manifest", "groups"):
        assert a.files[key].exists(), key
    ckpts = [p for k, p in a.files.items() if k.startswith("checkpoint:")]
    assert len(ckpts) == 1 + len(a.variants[1].models)
    man = json.loads(a.files["manifest"].read_text())
    assert man["config"]["output_dir"] == str(tmp_path / "r0")
    assert PipelineConfig.from_dict(man["config"]).digest() == man["config_sha256"]
    assert set(man["versions"]) >= {"numpy", "scipy", "python", "demandlstm"}
    # forecasts CSV: every model, every item, h = 1..M, clamped at zero
    fc = read_forecasts_csv(a.files["forecasts"])
    assert set(fc) == {v.model_tag for v in a.variants} | {bo.model_tag for bo in a.benchmarks}
    for tag, items in fc.items():
        for vec in items.values():
            assert vec.shape == (5,) and np.all(vec >= 0)
    text = a.files["report_txt"].read_text()
    for g in ("All", "G1", "G2", "G3"):
        assert f"mMAPE ({g})" in text


def test_checkpoint_replay_matches_run(tmp_path):
    cfg = small_cfg(tmp_path, train=VALID_TRAIN)
    out = run_end_to_end(cfg)
    params, meta = load_checkpoint(out.files["checkpoint:ALL:0"])
    replay = forecast_from_checkpoint(out.prepared, params, meta)
    for iid, f in out.variants[0].forecasts.items():
        assert_array_equal(replay[iid], f)


def test_end_to_end_rejects_horizon_zero_before_work(tmp_path):
    with pytest.raises(ConfigError):
        run_end_to_end(small_cfg(tmp_path / "x", horizon=0, train=VALID_TRAIN))
    assert not (tmp_path / "x").exists()
