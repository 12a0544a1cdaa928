"""Closed-form small-ball bounds for one measurement, and Monte Carlo estimators for them."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math

import numpy as np

from .measurements import Model
from .numerics import (
    as_rng,
    is_symmetric,
    log_volume_ratio,
    sample_uniform_ball,
    spectral_norm,
    wilson_interval,
)

DEFAULT_E = 2.0
MC_BLOCK = 1 << 14


@dataclass(frozen=True)
class SmallBallQuery:
    """One small-ball question: P[|<A, X>| <= delta] for X in the lemma's norm shell.

    ``params`` holds R (uniform) or sigma (Gaussian); a pair for rank-1 models.
    ``E`` is the spectral ceiling of the rank-1 lemmas.
    """

    model: Model
    dist: str
    n1: int
    n2: int
    params: tuple
    delta: float
    eps: float
    E: float = DEFAULT_E

    def __post_init__(self):
        object.__setattr__(self, "model", Model.parse(self.model))
        p = (float(self.params),) if np.isscalar(self.params) else tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        if self.dist not in ("uniform", "gaussian"):
            raise ValueError(f"unknown distribution {self.dist!r}")
        if len(p) != (2 if self.model is Model.RANK1 else 1) or any(not v > 0 for v in p):
            raise ValueError("distribution parameters must be positive, a pair for rank-1 models")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.model is Model.SYM_RANK1 and self.n1 != self.n2:
            raise ValueError("symmetric rank-1 queries need a square shape")
        if self.model is Model.RANK1 and self.eps > self.E:
            raise ValueError(f"rank-1 queries need eps <= E, got eps={self.eps}, E={self.E}")


def small_ball_bound(q, clamp=False):
    """Upper bound on P[|measurement of X| <= delta] from the matching lemma.

    The raw value can exceed 1; ``clamp=True`` caps it at 1 for reporting.
    """
    d, e = q.delta, q.eps
    if q.model is Model.UNSTRUCTURED:
        if q.dist == "uniform":
            val = 2 * d * math.exp(log_volume_ratio(q.n1 * q.n2)) / (e * q.params[0])
        else:
            val = math.sqrt(2) * d / (math.sqrt(math.pi) * q.params[0] * e)
    elif q.model is Model.RANK1:
        p1, p2 = q.params
        if q.dist == "uniform":
            ratio = math.exp(log_volume_ratio(q.n1) + log_volume_ratio(q.n2))
            val = 4 * d * ratio / (e * p1 * p2) * (1 + math.log(q.E * p1 * p2 / d))
        else:
            val = d / (e * p1 * p2) * (1 + math.log(1 + q.E * p1 * p2 / d))
    else:
        if q.dist == "uniform":
            val = 2 * math.sqrt(2 * d) * math.exp(log_volume_ratio(q.n1)) / (math.sqrt(e) * q.params[0])
        else:
            val = 2 * math.sqrt(d) / (math.sqrt(math.pi * e) * q.params[0])
    return min(max(val, 0.0), 1.0) if clamp else val


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    halfwidth: float
    lower: float
    upper: float
    hits: int
    trials: int

    @property
    def stderr(self):
        p = self.estimate
        return math.sqrt(p * (1 - p) / self.trials) if self.trials else 0.0


def check_witness(q, X):
    """Raise if X violates the norm condition of the lemma behind ``q``."""
    X = np.asarray(X, dtype=float)
    if X.shape != (q.n1, q.n2):
        raise ValueError(f"witness shape {X.shape} does not match {q.n1}x{q.n2}")
    tol = 1e-12
    if q.model is Model.UNSTRUCTURED:
        if np.linalg.norm(X) < q.eps * (1 - tol):
            raise ValueError("norm condition violated: need ||X||_F >= eps")
    elif q.model is Model.RANK1:
        s = spectral_norm(X)
        if s < q.eps * (1 - tol) or s > q.E * (1 + tol):
            raise ValueError("norm condition violated: need eps <= ||X||_2 <= E")
    else:
        if not is_symmetric(X):
            raise ValueError("witness must be symmetric")
        if spectral_norm(X) < q.eps * (1 - tol):
            raise ValueError("norm condition violated: need ||X||_2 >= eps")
    return X


def _draw_functional(q, X, gen, k):
    p = q.params
    if q.model is Model.UNSTRUCTURED:
        N = q.n1 * q.n2
        if q.dist == "uniform":
            A = sample_uniform_ball(N, p[0], gen, size=k)
        else:
            A = p[0] * gen.standard_normal((k, N))
        return A @ X.ravel()
    if q.dist == "uniform":
        a = sample_uniform_ball(q.n1, p[0], gen, size=k)
    else:
        a = p[0] * gen.standard_normal((k, q.n1))
    if q.model is Model.SYM_RANK1:
        return np.einsum("ki,ij,kj->k", a, X, a)
    if q.dist == "uniform":
        b = sample_uniform_ball(q.n2, p[1], gen, size=k)
    else:
        b = p[1] * gen.standard_normal((k, q.n2))
    return np.einsum("ki,ij,kj->k", a, X, b)


def small_ball_mc(q, X, trials, rng, threads=1, z=2.5758293035489004):
    """Monte Carlo estimate of P[|measurement of X| <= delta] with a Wilson interval.

    Trials are split into fixed blocks, block b drawing from ``rng.child(b)``,
    so the estimate does not depend on ``threads``.
    """
    X = check_witness(q, X)
    rng = as_rng(rng)
    trials = int(trials)
    sizes = [MC_BLOCK] * (trials // MC_BLOCK)
    if trials % MC_BLOCK:
        sizes.append(trials % MC_BLOCK)

    def block(b):
        vals = _draw_functional(q, X, rng.child(b).generator(), sizes[b])
        return int(np.count_nonzero(np.abs(vals) <= q.delta))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            hits = sum(pool.map(block, range(len(sizes))))
    else:
        hits = sum(block(b) for b in range(len(sizes)))
    lo, hi = wilson_interval(hits, trials, z)
    est = hits / trials if trials else 0.0
    return MCEstimate(est, 0.5 * (hi - lo), lo, hi, hits, trials)


def boundary_witness(q, rng):
    """Random witness sitting exactly on the lemma's norm floor eps."""
    gen = rng.generator() if hasattr(rng, "generator") else rng
    G = gen.standard_normal((q.n1, q.n2))
    if q.model is Model.SYM_RANK1:
        G = 0.5 * (G + G.T)
    norm = np.linalg.norm(G) if q.model is Model.UNSTRUCTURED else spectral_norm(G)
    return G * (q.eps / norm)
