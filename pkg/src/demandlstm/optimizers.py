"""Adam and COCOB-Backprop updates on flat parameter vectors.

Both work in place on a 1-D float64 array; state arrays have the same shape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class CocobState:
    """Per-coordinate betting state.

    ``scale`` is the running maximum |gradient| (starts at ``eps``);
    ``neg_grad_sum`` the cumulative negative gradient; ``abs_grad_sum`` the
    sum of |gradient|; ``reward`` the accumulated winnings (never negative);
    ``bet`` the current offset of the parameters from where betting started.
    """

    initial: np.ndarray
    scale: np.ndarray
    neg_grad_sum: np.ndarray
    abs_grad_sum: np.ndarray
    reward: np.ndarray
    bet: np.ndarray
    alpha: float = 100.0
    step: int = 0

    @classmethod
    def for_params(cls, params: np.ndarray, alpha: float = 100.0, eps: float = 1e-8) -> "CocobState":
        z = np.zeros_like(params)
        return cls(params.copy(), np.full_like(params, eps), z.copy(), z.copy(), z.copy(), z.copy(), alpha)


def cocob_step(state: CocobState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """COCOB-Backprop: bet a fraction of the wealth in the direction of -grad.

    There is deliberately no learning-rate argument.
    """
    state.step += 1
    state.scale = np.maximum(state.scale, np.abs(grads))
    state.abs_grad_sum += np.abs(grads)
    state.neg_grad_sum -= grads
    state.reward = np.maximum(state.reward - grads * state.bet, 0.0)
    L = state.scale
    fraction = state.neg_grad_sum / (L * np.maximum(state.abs_grad_sum + L, state.alpha * L))
    state.bet = fraction * (L + state.reward)
    params[:] = state.initial + state.bet
    return params


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self._kw = dict(beta1=beta1, beta2=beta2, eps=eps)
        self.state = None

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        if self.state is None:
            self.state = AdamState.for_params(params, **self._kw)
        adam_step(self.state, params, grads, self.lr)


class Cocob:
    def __init__(self, alpha: float = 100.0, eps: float = 1e-8):
        self.alpha, self.eps = alpha, eps
        self.state = None

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        if self.state is None:
            self.state = CocobState.for_params(params, self.alpha, self.eps)
        cocob_step(self.state, params, grads)


def make_optimizer(name: str, lr: float = 1e-3):
    """Fresh optimizer by name; ``lr`` is ignored for COCOB."""
    key = name.lower()
    if key == "adam":
        return Adam(lr)
    if key == "cocob":
        return Cocob()
    raise ValueError(f"unknown optimizer {name!r}")
