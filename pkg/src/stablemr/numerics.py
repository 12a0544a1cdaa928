"""Shared numerics: ball volumes, seeded sampling, norms and small decompositions."""
from dataclasses import dataclass
import math

import numpy as np
from scipy.special import gammaln

_MASK64 = (1 << 64) - 1
SYM_TOL = 1e-8
RANK_TOL = 1e-8


@dataclass(frozen=True)
class Rng:
    """Counter-based random stream keyed by ``(master_seed, stream_id)``.

    Each stream is a Philox generator whose key is the pair, so streams with
    different ids never overlap and results do not depend on which worker
    consumes them.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self):
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index):
        """Independent sub-stream number ``index`` of this stream."""
        ss = np.random.SeedSequence([self.stream_id, int(index) & _MASK64, 0x5EED])
        return Rng(self.master_seed, int(ss.generate_state(1, np.uint64)[0]))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Rng):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return Rng(0 if rng is None else int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def as_rng(rng):
    """Coerce an int or Rng to an Rng (splittable form)."""
    if isinstance(rng, Rng):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return Rng(0 if rng is None else int(rng))
    raise TypeError("a splittable Rng (or integer seed) is required here")


@dataclass(frozen=True)
class MatrixDims:
    n1: int
    n2: int

    def __post_init__(self):
        if int(self.n1) < 1 or int(self.n2) < 1:
            raise ValueError(f"matrix dimensions must be positive, got {self.n1}x{self.n2}")

    @property
    def size(self):
        return self.n1 * self.n2

    @property
    def shape(self):
        return (self.n1, self.n2)


def _log_volume(n):
    # n = 0 is allowed here (V_0 = 1); the bounds need V_{n-1} with n = 1.
    return 0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1.0)


def log_unit_ball_volume(n):
    if int(n) != n or n < 1:
        raise ValueError(f"invalid dimension {n}")
    return float(_log_volume(int(n)))


def unit_ball_volume(n):
    """Volume of the unit Euclidean ball in R^n."""
    if int(n) != n or n < 1:
        raise ValueError(f"invalid dimension {n}")
    n = int(n)
    if n > 170:
        return math.exp(_log_volume(n))
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def log_volume_ratio(n):
    """log(V_{n-1} / V_n), the ratio that appears in the uniform-ball constants."""
    if int(n) != n or n < 1:
        raise ValueError(f"invalid dimension {n}")
    return float(_log_volume(n - 1) - _log_volume(n))


def log_binom(n, k):
    if k < 0 or k > n:
        raise ValueError(f"binomial coefficient C({n},{k}) undefined")
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def sample_uniform_ball(n, R, rng, size=None):
    """Uniform draw(s) from the radius-R ball in R^n.

    Gaussian direction times R*u^(1/n). Returns shape (n,) or (size, n).
    """
    if R < 0:
        raise ValueError("radius must be nonnegative")
    gen = as_generator(rng)
    k = 1 if size is None else int(size)
    g = gen.standard_normal((k, n))
    u = gen.random(k)
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0] = 1.0
    x = g * (R * u ** (1.0 / n) / norms)[:, None]
    return x[0] if size is None else x


def sample_gaussian(n1, n2, sigma, rng, size=None):
    """i.i.d. N(0, sigma^2) matrix (or a stack of ``size`` matrices)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    gen = as_generator(rng)
    shape = (n1, n2) if size is None else (int(size), n1, n2)
    return sigma * gen.standard_normal(shape)


def _check_finite(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2-d array")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite entries in input")
    return X


def svd(X):
    """Thin SVD ``X = U @ diag(s) @ V.T`` with nonincreasing s."""
    X = _check_finite(X)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    return U, s, Vt.T


def is_symmetric(X, tol=SYM_TOL):
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        return False
    return np.linalg.norm(X - X.T) <= tol * max(np.linalg.norm(X), np.finfo(float).tiny)


def symeig(X, tol=SYM_TOL):
    """Eigendecomposition of a symmetric matrix, eigenvalues by decreasing magnitude."""
    X = _check_finite(X)
    if not is_symmetric(X, tol) and np.linalg.norm(X) > 0:
        raise ValueError("matrix is not symmetric")
    lam, U = np.linalg.eigh(0.5 * (X + X.T))
    order = np.argsort(-np.abs(lam), kind="stable")
    return U[:, order], lam[order]


def numerical_rank(X, tol=RANK_TOL):
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def truncate_rank(X, r):
    """Frobenius-nearest matrix of rank at most r."""
    X = np.asarray(X, dtype=float)
    if r >= min(X.shape):
        return X.copy()
    if r <= 0:
        return np.zeros_like(X)
    U, s, V = svd(X)
    return (U[:, :r] * s[:r]) @ V[:, :r].T


def fro_norm(X):
    return float(np.linalg.norm(X))


def spectral_norm(X):
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0.0
    return float(np.linalg.norm(X, 2))


def matrix_norm(X, kind):
    if kind == "fro":
        return fro_norm(X)
    if kind == "spectral":
        return spectral_norm(X)
    raise ValueError(f"unknown norm {kind!r}")


def inner(A, X):
    """Trace inner product <A, X> = trace(A^T X)."""
    return float(np.sum(np.asarray(A) * np.asarray(X)))


def wilson_interval(k, n, z=2.5758293035489004):
    """Wilson score interval for k successes in n trials (default 99%)."""
    if n <= 0:
        return 0.0, 1.0
    p = k / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def sphere_points(angles):
    """Map hyperspherical angles (k, d-1) to unit vectors in R^d.

    All angles but the last range over [0, pi]; the last over [0, 2 pi).
    """
    angles = np.atleast_2d(angles)
    k, p = angles.shape
    out = np.ones((k, p + 1))
    sin_prod = np.ones(k)
    for j in range(p):
        out[:, j] = sin_prod * np.cos(angles[:, j])
        sin_prod = sin_prod * np.sin(angles[:, j])
    out[:, p] = sin_prod
    return out
