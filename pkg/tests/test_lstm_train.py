import datetime as dt
from dataclasses import replace

import numpy as np
import pytest

from demandlstm.core_types import Calendar, ItemMeta, SalesSeries
from demandlstm.lstm.train import (SEARCH_BOUNDS, TrainConfig, TrainingDiverged, build_sequences, predict_final,
                                   train_epochs, validation_loss)
from demandlstm.windowing import build_training_set, mean_scale

D0 = dt.date(2018, 1, 1)


def sine_set(n_items=50, K=40, n=5, m=3, same=True):
    t = np.arange(K)
    scaled, metas = [], []
    for k in range(n_items):
        phase = 0 if same else k
        vals = 10 + 5 * np.sin(2 * np.pi * (t + phase) / 7)
        scaled.append(mean_scale(SalesSeries(f"s{k:02d}", D0, vals)))
        metas.append(ItemMeta(f"s{k:02d}", "sc00"))
    return build_training_set(scaled, metas, Calendar.empty(D0, K), n, m)


def test_memorization():
    # the reported loss includes the L2 term, so switch it off to measure the fit itself
    ts = sine_set()
    cfg = TrainConfig(cell_dim=32, max_epochs=20, learning_rate=1e-3, minibatch_size=60, l2_weight=0.0)
    res = train_epochs(ts, cfg)
    assert res.train_loss[-1] < 1e-3
    assert res.train_loss[-1] < res.train_loss[0]


def test_fixed_seed_is_bit_identical():
    ts = sine_set(6, same=False)
    cfg = TrainConfig(cell_dim=8, max_epochs=3, gaussian_noise_std=5e-4)
    a = train_epochs(ts, cfg)
    b = train_epochs(ts, cfg)
    assert a.train_loss == b.train_loss
    assert a.params.data.tobytes() == b.params.data.tobytes()


def test_noise_is_injected():
    ts = sine_set(6, same=False)
    cfg = TrainConfig(cell_dim=8, max_epochs=2, gaussian_noise_std=0.0)
    quiet = train_epochs(ts, cfg)
    noisy = train_epochs(ts, replace(cfg, gaussian_noise_std=8e-4))
    assert quiet.train_loss != noisy.train_loss


def test_cocob_trains_without_learning_rate():
    ts = sine_set(10, same=False)
    res = train_epochs(ts, TrainConfig(cell_dim=8, max_epochs=4, optimizer="cocob"))
    assert res.train_loss[-1] < res.train_loss[0]


def test_best_epoch_is_returned():
    ts = sine_set(8, same=False)
    res = train_epochs(ts, TrainConfig(cell_dim=8, max_epochs=4))
    data = build_sequences(ts, 4)
    assert res.best_epoch == int(np.argmin(res.validation_loss))
    assert validation_loss(res.params, data) == pytest.approx(min(res.validation_loss), rel=1e-12)


def test_divergence_is_reported():
    ts = sine_set(4, same=False)
    init = train_epochs(ts, TrainConfig(cell_dim=4, max_epochs=1)).params
    init.data[:] = np.nan
    with pytest.raises(TrainingDiverged):
        train_epochs(ts, TrainConfig(cell_dim=4, max_epochs=1), init=init)


def test_sequences_are_chronological_runs():
    ts = sine_set(2, K=20, n=5, m=3, same=False)
    data = build_sequences(ts, seq_len=4)
    n_train = 20 - 5 - 3
    assert data.n_train_sequences == 2 * n_train
    # the first item's runs end at every training origin
    runs = data.train_in[:n_train]
    lengths = data.train_len[:n_train]
    for r, L in zip(runs, lengths):
        np.testing.assert_array_equal(np.diff(r[:L]), 1)
        assert (r[L:] == r[L - 1]).all()
    assert sorted(r[L - 1] for r, L in zip(runs, lengths)) == list(range(n_train))
    # validation run ends at the reserved origin, forecast run at the last input window
    assert data.val_in[0, data.val_len[0] - 1] == n_train
    assert data.fc_in[0, data.fc_len[0] - 1] == 20 - 5
    assert data.step_dimension == ts.step_dimension


def test_training_targets_never_include_validation_window():
    ts = sine_set(3, K=30, same=False)
    data = build_sequences(ts, seq_len=8)
    offsets = np.cumsum([0] + [len(it.targets) for it in ts.items])
    val_rows = {off + it.validation_origin for off, it in zip(offsets, ts.items)}
    used = set(np.unique(data.train_out))
    assert not used & val_rows


def test_predict_final_shape():
    ts = sine_set(5, same=False)
    res = train_epochs(ts, TrainConfig(cell_dim=4, max_epochs=1))
    data = build_sequences(ts)
    assert predict_final(res.params, data, "forecast").shape == (5, 3)
    assert predict_final(res.params, data, "validation", batch_size=2).shape == (5, 3)


def test_config_bounds_and_round_trip():
    assert TrainConfig().violations() == []
    bad = TrainConfig(cell_dim=10, learning_rate=1.0, scheme="LS9", seq_len=9)
    assert len(bad.violations()) == 4
    with pytest.raises(ValueError):
        bad.validate()
    cfg = TrainConfig(cell_dim=64, scheme="LS2")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"cells": 3})
    assert set(SEARCH_BOUNDS) == {"cell_dim", "minibatch_size", "learning_rate", "max_epochs",
                                  "gaussian_noise_std", "l2_weight"}
