"""Random measurement ensembles and the linear measurement operator."""
from dataclasses import dataclass
from enum import Enum
import hashlib
import json
import math

import numpy as np

from .numerics import MatrixDims, Rng, as_generator, sample_uniform_ball


class Model(Enum):
    UNSTRUCTURED = "unstructured"
    RANK1 = "rank1"
    SYM_RANK1 = "sym_rank1"

    @classmethod
    def parse(cls, value):
        return value if isinstance(value, cls) else cls(value)

    @property
    def norm(self):
        """Error norm paired with this model by the stability theorems."""
        return "fro" if self is Model.UNSTRUCTURED else "spectral"


def _tuple(x):
    if x is None:
        return None
    if np.isscalar(x):
        return (float(x),)
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class UniformBall:
    """Uniform on the radius-R ball; for rank-1 models a pair (R1, R2)."""

    R: tuple

    def __post_init__(self):
        object.__setattr__(self, "R", _tuple(self.R))
        if any(not r > 0 for r in self.R):
            raise ValueError("ball radius must be positive")

    name = "uniform"


@dataclass(frozen=True)
class Gaussian:
    """i.i.d. N(0, sigma^2) entries; R is the truncation radius used by the bounds."""

    sigma: tuple
    R: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", _tuple(self.sigma))
        object.__setattr__(self, "R", _tuple(self.R))
        if any(not s > 0 for s in self.sigma):
            raise ValueError("sigma must be positive")
        if self.R is not None and (len(self.R) != len(self.sigma) or any(not r > 0 for r in self.R)):
            raise ValueError("Gaussian truncation radius must be positive, one per sigma")

    name = "gaussian"


@dataclass(frozen=True)
class EnsembleSpec:
    model: Model
    dist: UniformBall | Gaussian
    m: int
    n1: int
    n2: int

    def __post_init__(self):
        object.__setattr__(self, "model", Model.parse(self.model))
        MatrixDims(self.n1, self.n2)
        if int(self.m) < 1:
            raise ValueError("measurement count m must be at least 1")
        if self.model is Model.SYM_RANK1 and self.n1 != self.n2:
            raise ValueError("symmetric rank-1 measurements need a square shape")
        want = 2 if self.model is Model.RANK1 else 1
        params = self.dist.R if isinstance(self.dist, UniformBall) else self.dist.sigma
        if len(params) != want:
            raise ValueError(f"{self.model.value} ensembles take {want} distribution parameter(s)")

    @property
    def dims(self):
        return MatrixDims(self.n1, self.n2)

    @property
    def is_gaussian(self):
        return isinstance(self.dist, Gaussian)

    @property
    def radius(self):
        """Ball (or truncation) radius: a float, or a pair for rank-1 models."""
        R = self.dist.R
        if R is None:
            return None
        return R if self.model is Model.RANK1 else R[0]

    @property
    def effective_radius(self):
        """R, R1*R2 or R^2: the scale against which delta is measured."""
        R = self.dist.R
        if R is None:
            raise ValueError("Gaussian ensemble needs a truncation radius R for the bounds")
        if self.model is Model.RANK1:
            return R[0] * R[1]
        if self.model is Model.SYM_RANK1:
            return R[0] ** 2
        return R[0]

    def with_m(self, m):
        return EnsembleSpec(self.model, self.dist, m, self.n1, self.n2)

    def to_dict(self):
        one = self.model is not Model.RANK1
        doc = {"model": self.model.value, "dist": self.dist.name, "m": self.m,
               "n1": self.n1, "n2": self.n2}
        if isinstance(self.dist, UniformBall):
            doc["R"] = self.dist.R[0] if one else list(self.dist.R)
        else:
            doc["sigma"] = self.dist.sigma[0] if one else list(self.dist.sigma)
            if self.dist.R is not None:
                doc["R"] = self.dist.R[0] if one else list(self.dist.R)
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        allowed = {"model", "dist", "m", "n1", "n2", "R", "sigma"}
        extra = set(doc) - allowed
        if extra:
            raise ValueError(f"ensemble: unknown field(s) {sorted(extra)}")
        name = doc.get("dist")
        if name == "uniform":
            if "sigma" in doc:
                raise ValueError("ensemble.sigma: not used by the uniform distribution")
            dist = UniformBall(doc["R"])
        elif name == "gaussian":
            dist = Gaussian(doc["sigma"], doc.get("R"))
        else:
            raise ValueError(f"ensemble.dist: unknown distribution {name!r}")
        return cls(Model.parse(doc["model"]), dist, int(doc["m"]), int(doc["n1"]), int(doc["n2"]))

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class MeasurementOperator:
    """The map X -> (<A_j, X>)_j for a drawn list of measurement matrices.

    Rank-1 models keep the factors a_j, b_j (b_j = a_j for the symmetric
    model); the dense matrices are built only on request.
    """

    def __init__(self, n1, n2, dense=None, left=None, right=None, ensemble=None, seed=None):
        self.n1, self.n2 = int(n1), int(n2)
        self.ensemble = ensemble
        self.seed = seed
        self._dense = None if dense is None else np.asarray(dense, dtype=float)
        self._left = None if left is None else np.asarray(left, dtype=float)
        self._right = None if right is None else np.asarray(right, dtype=float)
        self._stacked = None
        self._norm = None
        if self._dense is None and self._left is None:
            raise ValueError("operator needs matrices or factors")
        if self._dense is not None and self._dense.shape[1:] != (self.n1, self.n2):
            raise ValueError("measurement matrices do not match the dimensions")

    @classmethod
    def from_matrices(cls, mats, ensemble=None, seed=None):
        mats = np.asarray(mats, dtype=float)
        if mats.ndim != 3:
            raise ValueError("expected a stack of matrices (m, n1, n2)")
        return cls(mats.shape[1], mats.shape[2], dense=mats, ensemble=ensemble, seed=seed)

    @classmethod
    def from_factors(cls, a, b=None, ensemble=None, seed=None):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if b is None:
            return cls(a.shape[1], a.shape[1], left=a, ensemble=ensemble, seed=seed)
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape[0] != b.shape[0]:
            raise ValueError("factor lists differ in length")
        return cls(a.shape[1], b.shape[1], left=a, right=b, ensemble=ensemble, seed=seed)

    @property
    def m(self):
        return self._dense.shape[0] if self._dense is not None else self._left.shape[0]

    @property
    def factored(self):
        return self._left is not None

    @property
    def factors(self):
        if self._left is None:
            return None
        return self._left, (self._left if self._right is None else self._right)

    @property
    def matrices(self):
        if self._dense is None:
            a, b = self.factors
            self._dense = np.einsum("ji,jk->jik", a, b)
        return self._dense

    @property
    def stacked(self):
        """m x (n1*n2) matrix whose rows are the vectorised A_j."""
        if self._stacked is None:
            self._stacked = self.matrices.reshape(self.m, -1)
        return self._stacked

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != (self.n1, self.n2):
            raise ValueError(f"dimension mismatch: expected {self.n1}x{self.n2}, got {X.shape}")
        return X

    def apply(self, X):
        X = self._check(X)
        if self._left is None:
            return self.stacked @ X.ravel()
        a, b = self.factors
        return np.einsum("ji,ik,jk->j", a, X, b)

    def adjoint(self, v):
        v = np.asarray(v, dtype=float).ravel()
        if v.shape[0] != self.m:
            raise ValueError(f"dimension mismatch: expected length {self.m}, got {v.shape[0]}")
        if self._left is None:
            return (v @ self.stacked).reshape(self.n1, self.n2)
        a, b = self.factors
        return (a.T * v) @ b

    def operator_norm(self, tol=1e-12, max_iters=100000):
        """Largest singular value of the stacked matrix, by power iteration on its Gram."""
        if self._norm is None:
            self._norm = _power_norm(self.stacked, tol, max_iters)
        return self._norm

    def digest(self):
        h = hashlib.sha256()
        if self.ensemble is not None and isinstance(self.seed, Rng):
            h.update(self.ensemble.digest().encode())
            h.update(f"{self.seed.master_seed}:{self.seed.stream_id}".encode())
        else:
            h.update(np.ascontiguousarray(self.matrices).tobytes())
        return h.hexdigest()[:16]


def _power_norm(S, tol, max_iters):
    if S.size == 0 or not np.any(S):
        return 0.0
    G = S.T @ S
    v = np.random.Generator(np.random.Philox(key=[7, 11])).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = G @ v
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return math.sqrt(max(lam, 0.0))


def draw_operator(ens, rng):
    """Draw m i.i.d. measurement matrices from the ensemble."""
    gen = as_generator(rng)
    seed = rng if isinstance(rng, Rng) else None
    m, n1, n2 = ens.m, ens.n1, ens.n2
    gauss = ens.is_gaussian
    if ens.model is Model.UNSTRUCTURED:
        if gauss:
            mats = ens.dist.sigma[0] * gen.standard_normal((m, n1, n2))
        else:
            mats = sample_uniform_ball(n1 * n2, ens.dist.R[0], gen, size=m).reshape(m, n1, n2)
        return MeasurementOperator.from_matrices(mats, ensemble=ens, seed=seed)
    if ens.model is Model.RANK1:
        if gauss:
            a = ens.dist.sigma[0] * gen.standard_normal((m, n1))
            b = ens.dist.sigma[1] * gen.standard_normal((m, n2))
        else:
            a = sample_uniform_ball(n1, ens.dist.R[0], gen, size=m)
            b = sample_uniform_ball(n2, ens.dist.R[1], gen, size=m)
        return MeasurementOperator.from_factors(a, b, ensemble=ens, seed=seed)
    if gauss:
        a = ens.dist.sigma[0] * gen.standard_normal((m, n1))
    else:
        a = sample_uniform_ball(n1, ens.dist.R[0], gen, size=m)
    return MeasurementOperator.from_factors(a, ensemble=ens, seed=seed)


def chernoff_tail(n, sigma, R):
    """Chernoff bound on P[||g||_2 > R] for g with n i.i.d. N(0, sigma^2) entries."""
    x = R * R / (n * sigma * sigma)
    if x <= 1:
        raise ValueError(f"bound is vacuous: R^2 = {R * R:g} <= n sigma^2 = {n * sigma * sigma:g}")
    return math.exp(-0.5 * n * (x - 1 - math.log(x)))


def tail_probability(ens):
    """Probability that one measurement draw leaves its truncation ball.

    Zero for uniform ensembles; the Chernoff bound for Gaussian ones. Rank-1
    ensembles give the pair for the left and right factors.
    """
    if not ens.is_gaussian:
        return (0.0, 0.0) if ens.model is Model.RANK1 else 0.0
    R = ens.dist.R
    if R is None:
        raise ValueError("Gaussian ensemble needs a truncation radius R")
    sig = ens.dist.sigma
    if ens.model is Model.RANK1:
        return chernoff_tail(ens.n1, sig[0], R[0]), chernoff_tail(ens.n2, sig[1], R[1])
    n = ens.n1 * ens.n2 if ens.model is Model.UNSTRUCTURED else ens.n1
    return chernoff_tail(n, sig[0], R[0])
