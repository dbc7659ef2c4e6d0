"""Batched peephole-LSTM forward/backward kernels.

Time-major layout throughout: inputs ``X[T, B, d]``. Gate blocks in the
stacked weights are ordered ``[input, forget, candidate, output]``; peephole
rows are ``[input, forget, output]``.
"""
import numpy as np

from .._accel import kernel


@kernel
def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(X, W, U, b, peep, V, h0, c0):
    T, B, _ = X.shape
    p = U.shape[1]
    m = V.shape[0]
    WT = np.ascontiguousarray(W.T)
    UT = np.ascontiguousarray(U.T)
    VT = np.ascontiguousarray(V.T)
    I = np.empty((T, B, p))
    F = np.empty((T, B, p))
    G = np.empty((T, B, p))
    O = np.empty((T, B, p))
    C = np.empty((T, B, p))
    H = np.empty((T, B, p))
    Y = np.empty((T, B, m))
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        a = np.dot(X[t], WT) + np.dot(h, UT) + b
        i = _sigmoid(a[:, :p] + peep[0] * c)
        f = _sigmoid(a[:, p:2 * p] + peep[1] * c)
        g = np.tanh(a[:, 2 * p:3 * p])
        c = f * c + i * g
        o = _sigmoid(a[:, 3 * p:] + peep[2] * c)
        h = o * np.tanh(c)
        I[t] = i
        F[t] = f
        G[t] = g
        O[t] = o
        C[t] = c
        H[t] = h
        Y[t] = np.dot(h, VT)
    return Y, I, F, G, O, C, H


def _backward(X, U, peep, V, h0, c0, I, F, G, O, C, H, dY):
    T, B, d = X.shape
    p = U.shape[1]
    m = V.shape[0]
    dW = np.zeros((4 * p, d))
    dU = np.zeros((4 * p, p))
    db = np.zeros(4 * p)
    dpeep = np.zeros((3, p))
    dV = np.zeros((m, p))
    dh_next = np.zeros((B, p))
    dc_next = np.zeros((B, p))
    da = np.empty((B, 4 * p))
    for t in range(T - 1, -1, -1):
        if t > 0:
            c_prev = C[t - 1]
            h_prev = H[t - 1]
        else:
            c_prev = c0
            h_prev = h0
        i = I[t]
        f = F[t]
        g = G[t]
        o = O[t]
        c = C[t]
        dyt = np.ascontiguousarray(dY[t])
        dV += np.dot(dyt.T, H[t])
        dh = np.dot(dyt, V) + dh_next
        tc = np.tanh(c)
        dao = dh * tc * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tc * tc) + dao * peep[2]
        dai = dc * g * i * (1.0 - i)
        daf = dc * c_prev * f * (1.0 - f)
        dag = dc * i * (1.0 - g * g)
        dc_next = dc * f + dai * peep[0] + daf * peep[1]
        dpeep[0] += np.sum(dai * c_prev, axis=0)
        dpeep[1] += np.sum(daf * c_prev, axis=0)
        dpeep[2] += np.sum(dao * c, axis=0)
        da[:, :p] = dai
        da[:, p:2 * p] = daf
        da[:, 2 * p:3 * p] = dag
        da[:, 3 * p:] = dao
        daT = np.ascontiguousarray(da.T)
        dW += np.dot(daT, X[t])
        dU += np.dot(daT, h_prev)
        db += np.sum(da, axis=0)
        dh_next = np.dot(da, U)
    return dW, dU, db, dpeep, dV


lstm_forward = kernel(_forward)
lstm_backward = kernel(_backward)
