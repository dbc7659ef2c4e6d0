"""Gaussian-process Bayesian optimisation with expected improvement."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .lstm.train import SEARCH_BOUNDS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dim:
    name: str
    low: float
    high: float
    kind: str = "float"  # "float" | "int" | "log"

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"{self.name}: need low < high")
        if self.kind not in ("float", "int", "log"):
            raise ValueError(f"{self.name}: unknown kind {self.kind}")
        if self.kind == "log" and self.low <= 0:
            raise ValueError(f"{self.name}: log dimension must be positive")

    def from_unit(self, u: float):
        u = min(1.0, max(0.0, float(u)))
        if self.kind == "log":
            v = math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        else:
            v = self.low + u * (self.high - self.low)
        # exp/log round-off can step one ulp outside the bounds
        v = min(self.high, max(self.low, v))
        if self.kind == "int":
            return int(round(v))
        return float(v)

    def to_unit(self, v) -> float:
        if self.kind == "log":
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (float(v) - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class SearchSpace:
    dims: Tuple[Dim, ...]

    def __len__(self):
        return len(self.dims)

    @property
    def names(self) -> List[str]:
        return [d.name for d in self.dims]

    def decode(self, u: np.ndarray) -> Dict[str, object]:
        return {d.name: d.from_unit(x) for d, x in zip(self.dims, u)}

    def encode(self, point: Dict[str, object]) -> np.ndarray:
        return np.array([d.to_unit(point[d.name]) for d in self.dims])

    def contains(self, point: Dict[str, object]) -> bool:
        return all(d.low <= point[d.name] <= d.high for d in self.dims)

    def without(self, *names: str) -> "SearchSpace":
        return SearchSpace(tuple(d for d in self.dims if d.name not in names))

    @classmethod
    def default(cls, bounds: Optional[Dict[str, tuple]] = None) -> "SearchSpace":
        b = dict(SEARCH_BOUNDS if bounds is None else bounds)
        kinds = {"cell_dim": "int", "minibatch_size": "int", "learning_rate": "log",
                 "max_epochs": "int", "gaussian_noise_std": "float", "l2_weight": "float"}
        return cls(tuple(Dim(k, float(lo), float(hi), kinds.get(k, "float")) for k, (lo, hi) in b.items()))

    def for_optimizer(self, optimizer: str) -> "SearchSpace":
        """COCOB takes no learning rate, so that dimension is dropped for it."""
        return self.without("learning_rate") if optimizer.lower() == "cocob" else self


@dataclass
class Trial:
    index: int
    params: Dict[str, object]
    objective: float
    status: str
    seconds: float


class HpoError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class HpoResult:
    best: Trial
    history: List[Trial]

    def running_best(self) -> List[float]:
        out, cur = [], np.inf
        for t in self.history:
            if t.status == "ok":
                cur = min(cur, t.objective)
            out.append(cur)
        return out


# ---------------------------------------------------------------------------
# GP surrogate

class GaussianProcess:
    """Zero-mean GP with a squared-exponential ARD kernel on standardised targets.

    Length scales are fitted by maximising the log marginal likelihood; the
    noise variance is fixed.
    """

    def __init__(self, noise: float = 1e-6, ls_bounds=(1e-2, 10.0)):
        self.noise = noise
        self.ls_bounds = ls_bounds

    def _kernel(self, a, b, ls):
        d = (a[:, None, :] - b[None, :, :]) / ls
        return np.exp(-0.5 * np.sum(d * d, axis=-1))

    def _nll(self, log_ls, X, y):
        ls = np.exp(log_ls)
        K = self._kernel(X, X, ls) + (self.noise + 1e-10) * np.eye(len(X))
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return 1e25
        alpha = cho_solve((L, True), y)
        return 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * len(X) * np.log(2 * np.pi)

    def fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> "GaussianProcess":
        self.X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.y_mean = y.mean()
        self.y_std = y.std() if y.std() > 0 else 1.0
        self.y = (y - self.y_mean) / self.y_std
        dim = self.X.shape[1]
        lo, hi = np.log(self.ls_bounds[0]), np.log(self.ls_bounds[1])
        starts = [np.full(dim, np.log(0.3))] + [rng.uniform(lo, hi, dim) for _ in range(3)]
        best = None
        for s in starts:
            res = minimize(self._nll, s, args=(self.X, self.y), method="L-BFGS-B", bounds=[(lo, hi)] * dim)
            if best is None or res.fun < best.fun:
                best = res
        self.ls = np.exp(best.x)
        K = self._kernel(self.X, self.X, self.ls) + (self.noise + 1e-10) * np.eye(len(self.X))
        self._L = np.linalg.cholesky(K)
        self._alpha = cho_solve((self._L, True), self.y)
        return self

    def predict(self, Xs: np.ndarray, standardized: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance (noise excluded)."""
        Xs = np.atleast_2d(Xs)
        ks = self._kernel(Xs, self.X, self.ls)
        mu = ks @ self._alpha
        v = solve_triangular(self._L, ks.T, lower=True)
        var = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
        if standardized:
            return mu, var
        return mu * self.y_std + self.y_mean, var * self.y_std ** 2


def expected_improvement(mu, var, best, xi: float = 0.0):
    sd = np.sqrt(np.maximum(var, 1e-18))
    imp = best - mu - xi
    z = imp / sd
    return imp * norm.cdf(z) + sd * norm.pdf(z)


def _propose(gp: GaussianProcess, y_best: float, dim: int, rng: np.random.Generator,
             n_candidates: int = 2000, n_polish: int = 5) -> np.ndarray:
    cands = rng.random((n_candidates, dim))
    mu, var = gp.predict(cands, standardized=True)
    ei = expected_improvement(mu, var, y_best)
    top = cands[np.argsort(-ei, kind="stable")[:n_polish]]
    best_x, best_v = top[0], -np.inf

    def neg(u):
        m, v = gp.predict(u[None, :], standardized=True)
        return -float(expected_improvement(m, v, y_best)[0])

    for x0 in top:
        res = minimize(neg, x0, method="L-BFGS-B", bounds=[(0.0, 1.0)] * dim)
        if -res.fun > best_v:
            best_x, best_v = np.clip(res.x, 0.0, 1.0), -res.fun
    return best_x


def bayes_optimize(space: SearchSpace, objective_fn: Callable[[Dict[str, object]], float], budget: int = 30,
                   seed: int = 0, n_init: int = 5) -> HpoResult:
    """Minimise ``objective_fn`` over ``space`` with GP-EI.

    The first ``n_init`` points come from a scrambled Halton sequence; each
    later point maximises expected improvement. Integer dimensions are rounded
    after the acquisition step. A trial that raises or returns a non-finite
    value is recorded as failed and ignored by the surrogate.
    """
    if budget < n_init:
        raise ValueError(f"budget must be at least {n_init}")
    rng = np.random.default_rng(seed)
    dim = len(space)
    init = qmc.Halton(d=dim, scramble=True, seed=seed).random(n_init)
    history: List[Trial] = []
    seen = set()

    def evaluate(u):
        point = space.decode(u)
        seen.add(tuple(space.encode(point).round(12)))
        t0 = time.perf_counter()
        try:
            val = float(objective_fn(point))
            status = "ok" if np.isfinite(val) else "failed"
        except Exception as exc:  # a failed trial must not end the search
            log.warning("trial %d failed: %s", len(history), exc)
            val, status = float("nan"), "failed"
        history.append(Trial(len(history), point, val, status, time.perf_counter() - t0))

    for u in init:
        evaluate(u)
    while len(history) < budget:
        ok = [t for t in history if t.status == "ok"]
        if len(ok) < 2:
            evaluate(rng.random(dim))
            continue
        X = np.array([space.encode(t.params) for t in ok])
        y = np.array([t.objective for t in ok])
        gp = GaussianProcess().fit(X, y, rng)
        u = _propose(gp, float(gp.y.min()), dim, rng)
        if tuple(space.encode(space.decode(u)).round(12)) in seen:
            u = rng.random(dim)
        evaluate(u)
    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise HpoError("every trial failed", history)
    best = min(ok, key=lambda t: t.objective)
    return HpoResult(best, history)


def random_search(space: SearchSpace, objective_fn, budget: int, seed: int = 0) -> HpoResult:
    """Baseline: uniformly random points in the unit cube of ``space``."""
    rng = np.random.default_rng(seed)
    history = []
    for k in range(budget):
        point = space.decode(rng.random(len(space)))
        t0 = time.perf_counter()
        val = float(objective_fn(point))
        history.append(Trial(k, point, val, "ok" if np.isfinite(val) else "failed", time.perf_counter() - t0))
    ok = [t for t in history if t.status == "ok"]
    return HpoResult(min(ok, key=lambda t: t.objective), history)


def write_history(result: HpoResult, path, names: Optional[Sequence[str]] = None) -> None:
    names = list(names or result.history[0].params.keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial"] + names + ["objective", "seconds", "status"])
        for t in result.history:
            w.writerow([t.index] + [repr(t.params[n]) for n in names]
                       + [repr(t.objective), f"{t.seconds:.3f}", t.status])
