"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line; the lines are printed as they
happen and again in a summary block at the end of the pytest run (see
``pytest_terminal_summary`` in conftest). Run just this file with::

    python3 -m pytest tests/test_acceptance.py -v -s
"""
import datetime as dt
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from demandlstm.core_types import ItemMeta, SalesSeries
from demandlstm.evaluation import mmape
from demandlstm.hpo import Dim, SearchSpace, bayes_optimize, random_search
from demandlstm.ingestion import SyntheticSpec, generate_synthetic, holiday_calendar, merge_series_sets
from demandlstm.lstm.train import TrainConfig
from demandlstm.optimizers import Adam, Cocob
from demandlstm.pipeline import PipelineConfig, prepare, run_benchmarks, run_variant
from demandlstm.preprocess import cluster_features
from demandlstm.windowing import make_windows, mean_scale, postprocess_forecast

import gradcheck

RESULTS = []
SEEDS = range(5)
DEFAULT_TRAIN = TrainConfig(cell_dim=50, minibatch_size=60, learning_rate=1e-3, max_epochs=10)


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print("\n" + line, flush=True)
    assert ok, line


def test_criterion_01_gradient_check():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for k in range(56):
        p = int(rng.integers(1, 9))
        T = int(rng.integers(1, 7))
        m = int(rng.integers(1, 5))
        d = int(rng.integers(1, 6))
        B = int(rng.integers(1, 4))
        scheme = ("LS1", "LS2")[k % 2]
        worst = max(worst, gradcheck.check(rng, p, d, T, m, B, scheme))
        count += 1
    secs = time.perf_counter() - t0
    record(1, worst < 1e-4 and secs < 60 and count >= 50,
           f"{count} configs (LS1+LS2), max relative error {worst:.2e} < 1e-4, {secs:.1f}s < 60s")


def test_criterion_02_transform_round_trip():
    rng = np.random.default_rng(7)
    start = dt.date(2019, 3, 1)
    cal = holiday_calendar(start, 120)
    worst = 0.0
    for k in range(1000):
        K = int(rng.integers(30, 120))
        m = int(rng.integers(1, 11))
        n = math.ceil(1.25 * m)
        x = rng.uniform(0.5, 500.0, K) * rng.uniform(0.01, 10)
        s = SalesSeries(f"s{k}", start, x)
        w = make_windows(mean_scale(s), ItemMeta(f"s{k}", "a", "b", "c", "d"), cal, n, m)
        o = w.validation_origin
        back = postprocess_forecast(w.targets[o], w.local_means[o], w.scale_factor)
        held_out = x[o + n:o + n + m]
        worst = max(worst, float(np.max(np.abs(back - held_out) / np.abs(held_out))))
    record(2, worst <= 1e-12, f"1000 random series, max relative error {worst:.2e} <= 1e-12")


def _mmape_loop(f, a):
    total = 0.0
    for fi, ai in zip(f, a):
        total += abs(fi - ai) / (1.0 + abs(ai))
    return total / len(f)


def test_criterion_03_metric_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(10_000):
        M = int(rng.integers(1, 30))
        a = np.zeros(M) if k % 10 == 0 else rng.gamma(1.0, 20.0, M) * (rng.random(M) > 0.3)
        f = rng.normal(10.0, 15.0, M)
        ref = _mmape_loop(f.tolist(), a.tolist())
        got = mmape(f, a)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
    record(3, worst <= 1e-12, f"10000 pairs (1000 all-zero actuals), max relative deviation {worst:.2e}")


def test_criterion_04_window_count_law():
    start = dt.date(2019, 1, 1)
    cal = holiday_calendar(start, 200)
    meta = ItemMeta("x", "a", "b", "c", "d")
    rng = np.random.default_rng(4)
    checked, bad = 0, []
    for K in range(3, 201):
        x = rng.gamma(2.0, 5.0, K)
        # corners of the valid region plus random interior points
        pairs = {(1, 1), (K - 2, 1), (1, K - 2)}
        for _ in range(25):
            m = int(rng.integers(1, K - 1))
            pairs.add((int(rng.integers(1, K - m)), m))
        for n, m in pairs:
            w = make_windows(mean_scale(SalesSeries("x", start, x)), meta, cal, n, m)
            checked += 1
            if w.n_train != K - n - m or len(w.targets) != K - n - m + 1:
                bad.append((K, n, m))
    record(4, not bad, f"{checked} (K, n, m) triples with K <= 200, violations: {bad[:3]}")


@pytest.mark.slow
def test_criterion_05_global_learning_benefit():
    rows, wins_naive, wins_snaive, slow = [], 0, 0, []
    for seed in SEEDS:
        t0 = time.perf_counter()
        spec = SyntheticSpec(n_items=200, n_days=190, shared_pattern_strength=0.8,
                             zero_inflation_probability=0.2, rng_seed=seed)
        cfg = PipelineConfig(synthetic=spec, seed=seed, train=DEFAULT_TRAIN, benchmarks=("naive", "snaive"))
        prep = prepare(generate_synthetic(spec), cfg)
        lstm = run_variant(prep, cfg, "ALL").report.mean
        naive, snaive = (b.report.mean for b in run_benchmarks(prep, cfg))
        secs = time.perf_counter() - t0
        wins_naive += lstm < naive
        wins_snaive += lstm < snaive
        slow += [seed] if secs > 600 else []
        rows.append(f"seed {seed}: LSTM.ALL {lstm:.3f} naive {naive:.3f} snaive {snaive:.3f} ({secs:.0f}s)")
    ok = wins_naive == 5 and wins_snaive >= 4 and not slow
    record(5, ok, f"LSTM.ALL < naive on {wins_naive}/5 (need 5), < snaive on {wins_snaive}/5 (need 4); "
           + "; ".join(rows))


def two_regime_set(seed):
    """Head items: high volume, dense, clear weekly cycle. Tail items: low volume,
    intermittent, noisier, with their own subcategory weekly patterns."""
    head = SyntheticSpec(n_items=67, n_days=190, shared_pattern_strength=0.9, zero_inflation_probability=0.0,
                         noise_std=0.1, base_level_range=(40.0, 200.0), weekly_seasonality_amplitude=0.6,
                         rng_seed=seed, item_prefix="head")
    tail = SyntheticSpec(n_items=133, n_days=190, shared_pattern_strength=0.9, zero_inflation_probability=0.3,
                         noise_std=0.3, base_level_range=(1.0, 6.0), weekly_seasonality_amplitude=0.6,
                         rng_seed=seed + 100, item_prefix="tail")
    return head, merge_series_sets(generate_synthetic(head), generate_synthetic(tail))


@pytest.mark.slow
def test_criterion_06_grouping_benefit():
    rows, wins = [], 0
    train = TrainConfig(cell_dim=50, minibatch_size=60, learning_rate=1e-3, max_epochs=20)
    for seed in SEEDS:
        head, data = two_regime_set(seed)
        cfg = PipelineConfig(synthetic=head, seed=seed, train=train, benchmarks=())
        prep = prepare(data, cfg)
        every = run_variant(prep, cfg, "ALL").report.mean
        grouped = run_variant(prep, cfg, "GROUP").report.mean
        wins += grouped <= every
        rows.append(f"seed {seed}: GROUP {grouped:.3f} ALL {every:.3f}")
    record(6, wins >= 4, f"LSTM.GROUP <= LSTM.ALL on {wins}/5 (need 4); " + "; ".join(rows))


def test_criterion_07_optimizer_contracts():
    w = np.ones(100)  # f(w0) = 100
    adam = Adam(lr=1e-2)
    steps_adam = None
    for k in range(1, 501):
        adam.step(w, 2 * w)
        if np.dot(w, w) < 1e-6:
            steps_adam = k
            break
    worst, cocob_ok = 0.0, True
    for target in (-7.5, -1.0, 0.3, 2.0, 25.0):
        v = np.zeros(1)
        opt = Cocob()
        for _ in range(2000):
            opt.step(v, 2 * (v - target))
        err = abs(v[0] - target)
        worst = max(worst, err)
        cocob_ok &= err < 0.1
    record(7, steps_adam is not None and cocob_ok,
           f"Adam f<1e-6 on 100-D quadratic after {steps_adam} steps (<=500); "
           f"COCOB worst |w-w*| {worst:.3g} < 0.1 over 5 targets in 2000 steps")


def branin(p):
    x, y = p["x"], p["y"]
    b, c, t = 5.1 / (4 * math.pi ** 2), 5 / math.pi, 1 / (8 * math.pi)
    return (y - b * x * x + c * x - 6) ** 2 + 10 * (1 - t) * math.cos(x) + 10


BRANIN_MIN = 0.39788735772973816


def test_criterion_08_hpo_beats_random():
    space = SearchSpace((Dim("x", -5.0, 10.0), Dim("y", 0.0, 15.0)))
    gp = [bayes_optimize(space, branin, 25, seed=s).best.objective - BRANIN_MIN for s in range(20)]
    rs = [random_search(space, branin, 25, seed=s).best.objective - BRANIN_MIN for s in range(20)]
    record(8, np.mean(gp) < np.mean(rs),
           f"Branin, budget 25, 20 seeds: GP-EI mean regret {np.mean(gp):.4f} < random {np.mean(rs):.4f}")


def test_criterion_09_two_blob_clustering():
    rng = np.random.default_rng(11)
    a = rng.normal(0.0, 1.0, (30, 9))
    b = rng.normal(8.0, 1.0, (30, 9))
    x = np.vstack([a, b])
    truth = np.array([0] * 30 + [1] * 30)
    ids = [f"i{k:03d}" for k in range(60)]
    sel = cluster_features(x, ids, range(2, 6), rng_seed=0)
    labels = np.array([sel.assignment.labels[i] for i in ids])
    purity = max(np.mean(labels == truth), np.mean(labels == 1 - truth))
    sil = sel.silhouettes.get(2, float("nan"))
    record(9, sel.k == 2 and sil > 0.8 and purity == 1.0,
           f"selected k={sel.k}, silhouette(k=2)={sil:.3f} > 0.8, purity {purity:.0%}")


def _cli(args):
    env = dict(os.environ)
    return subprocess.run([sys.executable, "-m", "demandlstm.cli", *args], env=env, capture_output=True,
                          text=True)


def test_criterion_10_determinism(tmp_path):
    common = ["run", "--synthetic", "--n-items", "30", "--n-days", "90", "--seed", "4", "--cell-dim", "50",
              "--minibatch", "60", "--epochs", "5", "--variant", "ALL", "--variant", "GROUP",
              "--benchmarks", "naive", "ewma", "holt_winters", "ar"]
    outs = [_cli(common + ["--out", str(tmp_path / f"run{k}")]) for k in range(2)]
    codes = [o.returncode for o in outs]
    blobs = [(tmp_path / f"run{k}" / "forecasts.csv").read_bytes() if codes[k] == 0 else b"" for k in range(2)]
    same = codes == [0, 0] and blobs[0] == blobs[1] and len(blobs[0]) > 0
    record(10, same, f"two `run` executions, exit codes {codes}, forecasts.csv byte-identical: {same} "
           f"({len(blobs[0])} bytes)")


@pytest.mark.slow
def test_criterion_11_bundled_config_smoke(tmp_path):
    t0 = time.perf_counter()
    out = _cli(["run", "--config", "synthetic", "--out", str(tmp_path / "smoke")])
    secs = time.perf_counter() - t0
    text = out.stdout
    tags = ["LSTM.ALL", "LSTM.GROUP", "LSTM.FEATURE", "LSTM.CLUSTER", "Naive", "Naive Seasonal", "EWMA", "SES",
            "ETS (non-seasonal)*", "ETS (seasonal)*", "ARIMA (AR(p))*"]
    missing = [t for t in tags if t not in text]
    shaped = all(f"mMAPE ({g})" in text for g in ("All", "G1", "G2", "G3")) and "Mean" in text and "Median" in text
    ok = out.returncode == 0 and not missing and shaped and secs < 1800
    if out.returncode:
        print(out.stderr[-2000:])
    else:
        print(text)
    record(11, ok, f"bundled config exit {out.returncode}, models missing from report: {missing}, "
           f"All/G1/G2/G3 x Mean/Median table: {shaped}, {secs:.0f}s < 1800s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
