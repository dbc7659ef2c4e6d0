"""The numba kernels and their pure-numpy fallbacks must agree."""
import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from numpy.testing import assert_allclose

from demandlstm import _accel
from demandlstm.lstm.kernels import lstm_backward, lstm_forward


def run_python(code, disable):
    env = dict(os.environ)
    env.pop(_accel.ENV_FLAG, None)
    if disable:
        env[_accel.ENV_FLAG] = "1"
    out = subprocess.run([sys.executable, "-c", textwrap.dedent(code)], env=env, capture_output=True,
                         text=True, check=True)
    return out.stdout.strip().splitlines()[-1]


@pytest.mark.parametrize("disable, expected", [(True, "numpy"), (False, "numba")])
def test_env_flag_selects_backend(disable, expected):
    assert run_python("from demandlstm._accel import backend; print(backend())", disable) == expected


@pytest.mark.parametrize("value, disabled", [("1", True), ("yes", True), ("0", False), ("", False)])
def test_flag_parsing(monkeypatch, value, disabled):
    monkeypatch.setenv(_accel.ENV_FLAG, value)
    assert _accel._flag_disabled() is disabled


def _problem(rng, T=5, B=4, d=7, p=3, m=2):
    X = rng.normal(size=(T, B, d))
    W = rng.normal(scale=0.4, size=(4 * p, d))
    U = rng.normal(scale=0.4, size=(4 * p, p))
    b = rng.normal(size=4 * p)
    peep = rng.normal(size=(3, p))
    V = rng.normal(size=(m, p))
    h0 = rng.normal(size=(B, p))
    c0 = rng.normal(size=(B, p))
    return X, W, U, b, peep, V, h0, c0


def test_forward_backward_match_python_reference(rng):
    X, W, U, b, peep, V, h0, c0 = _problem(rng)
    fast = lstm_forward(X, W, U, b, peep, V, h0, c0)
    slow = lstm_forward.py_func(X, W, U, b, peep, V, h0, c0)
    for a, s in zip(fast, slow):
        assert_allclose(a, s, rtol=1e-12, atol=1e-13)
    dY = rng.normal(size=fast[0].shape)
    Y, I, F, G, O, C, H = fast
    g_fast = lstm_backward(X, U, peep, V, h0, c0, I, F, G, O, C, H, dY)
    g_slow = lstm_backward.py_func(X, U, peep, V, h0, c0, I, F, G, O, C, H, dY)
    for a, s in zip(g_fast, g_slow):
        assert_allclose(a, s, rtol=1e-12, atol=1e-12)


TRAIN_SNIPPET = """
import json
from demandlstm.ingestion import SyntheticSpec, generate_synthetic
from demandlstm.lstm.train import TrainConfig
from demandlstm.pipeline import PipelineConfig, run_variant, run_benchmarks
spec = SyntheticSpec(n_items=8, n_days=60, n_subcategories=2, rng_seed=4)
cfg = PipelineConfig(synthetic=spec, horizon=5, benchmarks=("ses", "holt", "holt_winters"),
                     train=TrainConfig(cell_dim=5, minibatch_size=8, max_epochs=2))
data = generate_synthetic(spec)
out = run_variant(data, cfg, "ALL")
res = {"lstm": {k: list(v) for k, v in out.forecasts.items()}}
for b in run_benchmarks(data, cfg):
    res[b.tag] = {k: list(v) for k, v in b.forecasts.items()}
print(json.dumps(res))
"""


def test_training_run_identical_across_backends():
    a = json.loads(run_python(TRAIN_SNIPPET, disable=False))
    b = json.loads(run_python(TRAIN_SNIPPET, disable=True))
    assert a.keys() == b.keys()
    for model in a:
        for iid in a[model]:
            assert_allclose(np.array(a[model][iid]), np.array(b[model][iid]), rtol=1e-9, atol=1e-10,
                            err_msg=f"{model}/{iid}")
