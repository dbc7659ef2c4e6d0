import numpy as np
import pytest
from hypothesis import given, strategies as st

from demandlstm.optimizers import Adam, AdamState, Cocob, CocobState, adam_step, cocob_step, make_optimizer


def test_adam_first_step_moves_by_lr():
    w = np.ones(5)
    adam_step(AdamState.for_params(w), w, np.ones(5), lr=0.01)
    np.testing.assert_allclose(w, 1 - 0.01, rtol=1e-6)


def test_adam_zero_gradient_is_noop():
    w = np.arange(4.0)
    st_ = AdamState.for_params(w)
    for _ in range(3):
        adam_step(st_, w, np.zeros(4), 0.1)
    np.testing.assert_array_equal(w, np.arange(4.0))


def test_adam_quadratic_bowl():
    w = np.ones(100)
    opt = Adam(lr=1e-2)
    for _ in range(500):
        opt.step(w, 2 * w)
    assert np.dot(w, w) < 1e-6


def test_adam_matches_reference_recursion(rng):
    # independent scalar recursion of the bias-corrected update
    g_seq = rng.normal(size=20)
    w = np.array([0.3])
    st_ = AdamState.for_params(w)
    m = v = 0.0
    ref = 0.3
    for t, g in enumerate(g_seq, 1):
        adam_step(st_, w, np.array([g]), 0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert w[0] == pytest.approx(ref, rel=1e-12, abs=1e-15)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10))
def test_adam_early_update_bound(grads):
    w = np.zeros(1)
    st_ = AdamState.for_params(w)
    lr = 0.01
    for g in grads:
        before = w.copy()
        adam_step(st_, w, np.array([g]), lr)
        assert abs(w[0] - before[0]) <= lr / (1 - 0.9) + 1e-12


def test_cocob_zero_gradient_is_noop():
    w = np.array([1.0, -2.0])
    st_ = CocobState.for_params(w)
    for _ in range(5):
        cocob_step(st_, w, np.zeros(2))
    np.testing.assert_array_equal(w, [1.0, -2.0])


@pytest.mark.parametrize("target", [3.0, -3.0])
def test_cocob_converges_without_learning_rate(target):
    w = np.zeros(1)
    opt = Cocob()
    for _ in range(2000):
        opt.step(w, 2 * (w - target))
    assert abs(w[0] - target) < 0.1


def test_cocob_trajectory_is_mirrored():
    a, b = np.zeros(1), np.zeros(1)
    oa, ob = Cocob(), Cocob()
    for _ in range(300):
        oa.step(a, 2 * (a - 3))
        ob.step(b, 2 * (b + 3))
        assert a[0] == pytest.approx(-b[0], abs=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_cocob_stays_finite(grads):
    w = np.zeros(1)
    st_ = CocobState.for_params(w)
    for g in grads:
        cocob_step(st_, w, np.array([g]))
        assert np.isfinite(w).all()


def test_optimizers_are_deterministic(rng):
    grads = rng.normal(size=(10, 6))
    for name in ("adam", "cocob"):
        runs = []
        for _ in range(2):
            w = np.ones(6)
            opt = make_optimizer(name, 1e-2)
            for g in grads:
                opt.step(w, g)
            runs.append(w.tobytes())
        assert runs[0] == runs[1]


def test_make_optimizer():
    assert isinstance(make_optimizer("Adam", 0.1), Adam)
    assert isinstance(make_optimizer("cocob"), Cocob)
    with pytest.raises(ValueError):
        make_optimizer("sgd")
