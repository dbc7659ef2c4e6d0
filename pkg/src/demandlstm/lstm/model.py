"""Peephole LSTM with a bias-free projection layer: parameters, loss, BPTT."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .kernels import lstm_backward, lstm_forward

SCHEMES = ("LS1", "LS2")
GATES = ("input", "forget", "candidate", "output")
PEEPHOLES = ("input", "forget", "output")


class ShapeError(ValueError):
    pass


class LstmParams:
    """All weights of the network, stored as views into one flat buffer.

    ``W[4p, d]``, ``U[4p, p]`` and ``b[4p]`` stack the four gates; ``peep[3, p]``
    holds the input/forget/output peepholes and ``V[m, p]`` is the projection.
    """

    NAMES = ("W", "U", "b", "peep", "V")

    def __init__(self, d: int, p: int, m: int, data: Optional[np.ndarray] = None):
        self.d, self.p, self.m = int(d), int(p), int(m)
        shapes = self.shapes()
        size = sum(int(np.prod(s)) for s in shapes.values())
        if data is None:
            data = np.zeros(size)
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape != (size,):
            raise ShapeError(f"flat parameter vector must have length {size}, got {data.shape}")
        self.data = data
        off = 0
        for name, shape in shapes.items():
            k = int(np.prod(shape))
            setattr(self, name, data[off:off + k].reshape(shape))
            off += k

    def shapes(self) -> Dict[str, tuple]:
        d, p, m = self.d, self.p, self.m
        return {"W": (4 * p, d), "U": (4 * p, p), "b": (4 * p,), "peep": (3, p), "V": (m, p)}

    @property
    def size(self) -> int:
        return len(self.data)

    def copy(self) -> "LstmParams":
        return LstmParams(self.d, self.p, self.m, self.data.copy())

    def zeros_like(self) -> "LstmParams":
        return LstmParams(self.d, self.p, self.m)

    def gate(self, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W_g, U_g, b_g)`` for one gate."""
        k = GATES.index(name)
        sl = slice(k * self.p, (k + 1) * self.p)
        return self.W[sl], self.U[sl], self.b[sl]

    def penalty_mask(self) -> np.ndarray:
        """1 for weights covered by the L2 term, 0 for biases."""
        mask = np.ones(self.size)
        off = self.W.size + self.U.size
        mask[off:off + self.b.size] = 0.0
        return mask

    @classmethod
    def initialize(cls, d: int, p: int, m: int, rng: np.random.Generator,
                   forget_bias: float = 1.0) -> "LstmParams":
        """Glorot-uniform weights, forget bias +1, zero peepholes and other biases."""
        prm = cls(d, p, m)
        lim_w = np.sqrt(6.0 / (d + p))
        lim_u = np.sqrt(6.0 / (p + p))
        lim_v = np.sqrt(6.0 / (p + m))
        prm.W[:] = rng.uniform(-lim_w, lim_w, prm.W.shape)
        prm.U[:] = rng.uniform(-lim_u, lim_u, prm.U.shape)
        prm.V[:] = rng.uniform(-lim_v, lim_v, prm.V.shape)
        prm.b[p:2 * p] = forget_bias
        return prm

    def __repr__(self):
        return f"LstmParams(d={self.d}, p={self.p}, m={self.m})"


@dataclass
class ForwardCache:
    X: np.ndarray
    h0: np.ndarray
    c0: np.ndarray
    I: np.ndarray
    F: np.ndarray
    G: np.ndarray
    O: np.ndarray
    C: np.ndarray
    H: np.ndarray
    Y: np.ndarray


def _as_batch(X: np.ndarray) -> Tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        return np.ascontiguousarray(X[:, None, :]), True
    if X.ndim != 3:
        raise ShapeError(f"inputs must be (T, d) or (T, B, d), got shape {X.shape}")
    return np.ascontiguousarray(X), False


def forward(params: LstmParams, X, h0=None, c0=None):
    """Run the network over ``X`` of shape ``(T, d)`` or ``(T, B, d)``.

    Returns ``(Y, (h_T, c_T), cache)`` with ``Y`` shaped like ``X`` but with
    ``m`` in the last axis.
    """
    Xb, single = _as_batch(X)
    T, B, d = Xb.shape
    if d != params.d:
        raise ShapeError(f"input vectors have dimension {d}, but W expects {params.d}")
    if T < 1:
        raise ShapeError("need at least one time step")
    zeros = np.zeros((B, params.p))
    h0 = zeros if h0 is None else np.ascontiguousarray(np.broadcast_to(h0, (B, params.p)), dtype=np.float64)
    c0 = zeros if c0 is None else np.ascontiguousarray(np.broadcast_to(c0, (B, params.p)), dtype=np.float64)
    Y, I, F, G, O, C, H = lstm_forward(Xb, params.W, params.U, params.b, params.peep, params.V, h0, c0)
    cache = ForwardCache(Xb, h0, c0, I, F, G, O, C, H, Y)
    state = (H[-1], C[-1])
    if single:
        return Y[:, 0], (state[0][0], state[1][0]), cache
    return Y, state, cache


def step_weights(scheme: str, T: int, B: int = 1, lengths=None) -> np.ndarray:
    """``(T, B)`` weights on per-step errors: all valid steps (LS1) or the last one (LS2)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown learning scheme {scheme!r}")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    t = np.arange(T)[:, None]
    if scheme == "LS1":
        return (t < lengths[None, :]).astype(np.float64)
    return (t == lengths[None, :] - 1).astype(np.float64)


def step_errors(outputs, targets) -> np.ndarray:
    """Per-step mean squared error ``(1/m)||Y_t - Yhat_t||^2``."""
    e = np.asarray(outputs) - np.asarray(targets)
    return np.mean(e * e, axis=-1)


def l2_penalty(params: LstmParams, l2_weight: float) -> float:
    w = params.data * params.penalty_mask()
    return float(l2_weight * np.dot(w, w))


def loss(outputs, targets, scheme: str, params: Optional[LstmParams] = None,
         l2_weight: float = 0.0, lengths=None) -> float:
    """Sequence loss under a learning scheme plus the L2 term.

    For a batch ``(T, B, m)`` the data term is averaged over sequences.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if outputs.shape != targets.shape:
        raise ShapeError(f"outputs {outputs.shape} and targets {targets.shape} differ")
    if outputs.ndim == 2:
        outputs, targets = outputs[:, None], targets[:, None]
    T, B, _ = outputs.shape
    w = step_weights(scheme, T, B, lengths)
    data = float(np.sum(w * step_errors(outputs, targets)) / B)
    if params is not None and l2_weight:
        data += l2_penalty(params, l2_weight)
    return data


def clip_by_global_norm(grad: LstmParams, threshold: float) -> float:
    """Rescale in place so the global norm is at most ``threshold``; returns the pre-clip norm."""
    norm = float(np.sqrt(np.dot(grad.data, grad.data)))
    if threshold is not None and norm > threshold:
        grad.data *= threshold / norm
    return norm


def backward(params: LstmParams, cache: ForwardCache, targets, scheme: str,
             l2_weight: float = 0.0, lengths=None, clip_norm: Optional[float] = 1.0) -> LstmParams:
    """Exact gradient of :func:`loss` with respect to every parameter.

    ``clip_norm=None`` returns the raw gradient.
    """
    Y = cache.Y
    tg = np.asarray(targets, dtype=np.float64)
    if tg.ndim == 2:
        tg = tg[:, None]
    if tg.shape != Y.shape:
        raise ShapeError(f"targets {tg.shape} do not match outputs {Y.shape}")
    T, B, m = Y.shape
    w = step_weights(scheme, T, B, lengths)
    dY = np.ascontiguousarray((2.0 / (m * B)) * w[:, :, None] * (Y - tg))
    dW, dU, db, dpeep, dV = lstm_backward(cache.X, params.U, params.peep, params.V, cache.h0, cache.c0,
                                          cache.I, cache.F, cache.G, cache.O, cache.C, cache.H, dY)
    grad = params.zeros_like()
    grad.W[:] = dW
    grad.U[:] = dU
    grad.b[:] = db
    grad.peep[:] = dpeep
    grad.V[:] = dV
    if l2_weight:
        grad.data += 2.0 * l2_weight * params.data * params.penalty_mask()
    if clip_norm is not None:
        clip_by_global_norm(grad, clip_norm)
    return grad


# ---------------------------------------------------------------------------
# checkpoint files
#
# layout (little endian):
#   8s  magic  b"DLSTMCK\0"
#   u32 format version
#   u32 metadata length L, then L bytes of UTF-8 JSON
#   u32 tensor count N
#   N x { u16 name length, name bytes, u32 ndim, ndim x u64 dims }
#   tensor payloads, row-major float64, in header order

MAGIC = b"DLSTMCK\0"
FORMAT_VERSION = 1


def save_checkpoint(path, params: LstmParams, metadata: Optional[dict] = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    header = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta,
              struct.pack("<I", len(LstmParams.NAMES))]
    for name in LstmParams.NAMES:
        arr = getattr(params, name)
        nb = name.encode()
        header.append(struct.pack("<H", len(nb)) + nb + struct.pack("<I", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    with open(path, "wb") as fh:
        fh.write(b"".join(header))
        for name in LstmParams.NAMES:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[LstmParams, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path} is not a model checkpoint")
    version, mlen = struct.unpack_from("<II", blob, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    metadata = json.loads(blob[off:off + mlen].decode())
    off += mlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    shapes = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shapes[name] = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
    if tuple(shapes) != LstmParams.NAMES:
        raise ValueError(f"unexpected tensors {list(shapes)}")
    p = shapes["U"][1]
    params = LstmParams(shapes["W"][1], p, shapes["V"][0])
    if {k: tuple(v) for k, v in shapes.items()} != params.shapes():
        raise ShapeError("inconsistent tensor shapes in checkpoint")
    payload = np.frombuffer(blob, dtype="<f8", offset=off, count=params.size)
    params.data[:] = payload
    return params, metadata
