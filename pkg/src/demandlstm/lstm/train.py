"""Minibatch BPTT training over moving-window sequences."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional

import numpy as np

from ..optimizers import make_optimizer
from ..windowing import TrainingSet
from .model import SCHEMES, LstmParams, backward, forward, loss, step_errors

log = logging.getLogger(__name__)

# (min, max) per hyperparameter
SEARCH_BOUNDS = {
    "cell_dim": (50, 100),
    "minibatch_size": (60, 1500),
    "learning_rate": (1e-6, 1e-3),
    "max_epochs": (5, 20),
    "gaussian_noise_std": (1e-4, 8e-4),
    "l2_weight": (1e-4, 8e-4),
}


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    cell_dim: int = 50
    minibatch_size: int = 60
    learning_rate: float = 1e-3
    max_epochs: int = 10
    gaussian_noise_std: float = 1e-4
    l2_weight: float = 1e-4
    scheme: str = "LS1"
    optimizer: str = "adam"
    rng_seed: int = 0
    seq_len: int = 4
    seq_stride: int = 1
    clip_norm: float = 1.0

    def violations(self, bounds: Optional[Dict[str, tuple]] = None) -> List[str]:
        bounds = SEARCH_BOUNDS if bounds is None else bounds
        out = []
        for name, (lo, hi) in bounds.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                out.append(f"{name}={v} outside [{lo}, {hi}]")
        if self.scheme not in SCHEMES:
            out.append(f"scheme must be one of {SCHEMES}")
        if self.optimizer.lower() not in ("adam", "cocob"):
            out.append("optimizer must be adam or cocob")
        if not 1 <= self.seq_len <= 8:
            out.append("seq_len must lie in [1, 8]")
        if self.seq_stride < 1:
            out.append("seq_stride must be >= 1")
        return out

    def validate(self, bounds: Optional[Dict[str, tuple]] = None) -> "TrainConfig":
        bad = self.violations(bounds)
        if bad:
            raise ValueError("invalid TrainConfig: " + "; ".join(bad))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SequenceData:
    """Row tables addressing chronological runs of windows for every item.

    ``inputs``/``targets`` stack all items' step inputs and targets; each
    sequence is a ``(T,)`` row of indices into them, right-padded by repeating
    its last index, with its true length in ``lengths``.
    """

    item_ids: List[str]
    inputs: np.ndarray
    targets: np.ndarray
    n_sales: int
    train_in: np.ndarray
    train_out: np.ndarray
    train_len: np.ndarray
    val_in: np.ndarray
    val_out: np.ndarray
    val_len: np.ndarray
    fc_in: np.ndarray
    fc_len: np.ndarray
    val_local_mean: np.ndarray
    fc_local_mean: np.ndarray
    scale_factor: np.ndarray

    @property
    def step_dimension(self) -> int:
        return self.inputs.shape[1]

    @property
    def m(self) -> int:
        return self.targets.shape[1]

    @property
    def n_train_sequences(self) -> int:
        return len(self.train_len)


def _run(end: int, L: int) -> np.ndarray:
    start = max(0, end - L + 1)
    r = np.arange(start, end + 1)
    return np.concatenate([r, np.full(L - len(r), end)])


def build_sequences(ts: TrainingSet, seq_len: int = 4, seq_stride: int = 1) -> SequenceData:
    if not ts.items:
        raise ValueError("training set has no items")
    L = seq_len
    ins, outs = [], []
    tr_in, tr_out, tr_len = [], [], []
    v_in, v_out, v_len, f_in, f_len = [], [], [], [], []
    v_lm, f_lm, sf = [], [], []
    off_in = off_out = 0
    for it in ts.items:
        ins.append(it.step_inputs())
        outs.append(it.targets)
        for end in range(it.n_train - 1, -1, -seq_stride):
            r = _run(end, L)
            tr_in.append(off_in + r)
            tr_out.append(off_out + r)
            tr_len.append(min(L, end + 1))
        r = _run(it.validation_origin, L)
        v_in.append(off_in + r)
        v_out.append(off_out + r)
        v_len.append(min(L, it.validation_origin + 1))
        f_in.append(off_in + _run(it.forecast_origin, L))
        f_len.append(min(L, it.forecast_origin + 1))
        v_lm.append(it.local_means[it.validation_origin])
        f_lm.append(it.local_means[it.forecast_origin])
        sf.append(it.scale_factor)
        off_in += len(it.inputs)
        off_out += len(it.targets)
    return SequenceData(
        [it.item_id for it in ts.items], np.concatenate(ins), np.concatenate(outs), ts.n,
        np.array(tr_in), np.array(tr_out), np.array(tr_len),
        np.array(v_in), np.array(v_out), np.array(v_len),
        np.array(f_in), np.array(f_len),
        np.array(v_lm), np.array(f_lm), np.array(sf))


def _gather(table: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``(T, B, width)`` contiguous block for the given sequences."""
    return np.ascontiguousarray(table[rows].transpose(1, 0, 2))


def _final_step(Y: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    return Y[lengths - 1, np.arange(Y.shape[1])]


def predict_final(params: LstmParams, data: SequenceData, which: str = "forecast",
                  batch_size: int = 4096) -> np.ndarray:
    """Normalised network output at the last step of each item's validation/forecast run."""
    rows, lengths = (data.fc_in, data.fc_len) if which == "forecast" else (data.val_in, data.val_len)
    out = []
    for s in range(0, len(rows), batch_size):
        X = _gather(data.inputs, rows[s:s + batch_size])
        Y, _, _ = forward(params, X)
        out.append(_final_step(Y, lengths[s:s + batch_size]))
    return np.concatenate(out) if out else np.zeros((0, data.m))


def validation_loss(params: LstmParams, data: SequenceData) -> float:
    """Mean squared error of the final-step forecast on the reserved windows."""
    pred = predict_final(params, data, "validation")
    tgt = data.targets[data.val_out[np.arange(len(data.val_len)), data.val_len - 1]]
    return float(np.mean(step_errors(pred, tgt)))


@dataclass
class TrainResult:
    params: LstmParams
    train_loss: List[float]
    validation_loss: List[float]
    best_epoch: int
    seconds: float
    config: TrainConfig = None


def train_epochs(ts_or_data, config: TrainConfig, init: Optional[LstmParams] = None) -> TrainResult:
    """Train one network; returns the parameters from the best validation epoch.

    Gaussian noise (``gaussian_noise_std``) is added to the sales part of each
    step input while training only.
    """
    t0 = time.perf_counter()
    data = ts_or_data if isinstance(ts_or_data, SequenceData) else build_sequences(
        ts_or_data, config.seq_len, config.seq_stride)
    if data.n_train_sequences == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(config.rng_seed)
    params = init.copy() if init is not None else LstmParams.initialize(
        data.step_dimension, config.cell_dim, data.m, rng)
    opt = make_optimizer(config.optimizer, config.learning_rate)
    S = data.n_train_sequences
    bs = max(1, min(config.minibatch_size, S))
    best = (np.inf, params.copy(), -1)
    train_trace, val_trace = [], []
    for epoch in range(config.max_epochs):
        order = rng.permutation(S)
        total, batches = 0.0, 0
        for s in range(0, S, bs):
            idx = order[s:s + bs]
            X = _gather(data.inputs, data.train_in[idx])
            tg = _gather(data.targets, data.train_out[idx])
            lengths = data.train_len[idx]
            if config.gaussian_noise_std > 0:
                X[:, :, :data.n_sales] += rng.normal(0.0, config.gaussian_noise_std, X[:, :, :data.n_sales].shape)
            Y, _, cache = forward(params, X)
            value = loss(Y, tg, config.scheme, params, config.l2_weight, lengths)
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became {value} in epoch {epoch}, batch {batches}")
            grad = backward(params, cache, tg, config.scheme, config.l2_weight, lengths, config.clip_norm)
            opt.step(params.data, grad.data)
            total += value
            batches += 1
        if not np.all(np.isfinite(params.data)):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        vloss = validation_loss(params, data)
        train_trace.append(total / batches)
        val_trace.append(vloss)
        log.debug("epoch %d train %.6f val %.6f", epoch, train_trace[-1], vloss)
        if vloss < best[0]:
            best = (vloss, params.copy(), epoch)
    return TrainResult(best[1], train_trace, val_trace, best[2], time.perf_counter() - t0, config)
