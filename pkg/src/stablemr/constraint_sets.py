"""The six structured constraint cones, their projections, membership tests and sampling."""
from dataclasses import dataclass, field
from enum import Enum
import itertools
import math

import numpy as np

from .numerics import (
    MatrixDims,
    RANK_TOL,
    as_generator,
    is_symmetric,
    numerical_rank,
    symeig,
    truncate_rank,
)

ORTHO_TOL = 1e-10
EXTREMES_GUARD = 10**6
_HEURISTIC_ROUNDS = 10


class SetKind(Enum):
    """Which restricted set a covering or stability statement is about.

    BALL is the cone cut to the unit Frobenius ball, DIFF_BALL the set of
    differences of two such members, DIFF_CONE the difference cone cut to the
    unit ball.
    """

    BALL = "ball"
    DIFF_BALL = "diff_ball"
    DIFF_CONE = "diff_cone"

    @property
    def index(self):
        return {"ball": 1, "diff_ball": 2, "diff_cone": 3}[self.value]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {
            1: cls.BALL, 2: cls.DIFF_BALL, 3: cls.DIFF_CONE,
            "single_point": cls.BALL, "uniform_on_ball": cls.DIFF_BALL,
            "uniform_on_cone": cls.DIFF_CONE,
        }
        if value in aliases:
            return aliases[value]
        return cls(value)


@dataclass(frozen=True)
class DictExtremes:
    sigma_min: float
    sigma_max: float
    kappa: float
    s: int


def _as_stack(mats, n1=None, n2=None):
    arr = np.asarray(mats, dtype=float)
    if arr.ndim == 2 and n1 is not None:
        arr = arr.reshape(arr.shape[0], n1, n2)
    if arr.ndim != 3:
        raise ValueError("expected a stack of matrices with shape (t, n1, n2)")
    return arr


def _check_shape(spec, X):
    X = np.asarray(X, dtype=float)
    if X.shape != (spec.n1, spec.n2):
        raise ValueError(f"dimension mismatch: expected {spec.n1}x{spec.n2}, got {X.shape}")
    return X


def _top_indices(values, k):
    return np.sort(np.argsort(-values, kind="stable")[:k])


def _scale_to_radius(X, radius, gen, dof, on_sphere):
    nrm = np.linalg.norm(X)
    if radius == 0 or nrm == 0:
        return np.zeros_like(X)
    scale = radius if on_sphere else radius * gen.random() ** (1.0 / max(dof, 1))
    return X * (scale / nrm)


class ConstraintSpec:
    """Base class. Subclasses are frozen dataclasses describing one cone."""

    variant = ""
    exact_projection = True

    @property
    def dims(self):
        return MatrixDims(self.n1, self.n2)

    @property
    def symmetric(self):
        return False

    def residual(self, X):
        X = _check_shape(self, X)
        return float(np.linalg.norm(X - self.project(X)))

    def contains(self, X, tol=1e-8):
        X = _check_shape(self, X)
        return self.residual(X) <= tol * max(1.0, float(np.linalg.norm(X)))


def _validate_basis(basis):
    t = basis.shape[0]
    M = basis.reshape(t, -1)
    if np.abs(M @ M.T - np.eye(t)).max() > ORTHO_TOL:
        raise ValueError("subspace basis is not orthonormal")


@dataclass(frozen=True, eq=False)
class Subspace(ConstraintSpec):
    """span{M_1..M_t} for an orthonormal basis."""

    n1: int
    n2: int
    basis: np.ndarray
    name: str = ""

    variant = "subspace"

    def __post_init__(self):
        MatrixDims(self.n1, self.n2)
        b = _as_stack(self.basis, self.n1, self.n2)
        if b.shape[1:] != (self.n1, self.n2) or b.shape[0] < 1:
            raise ValueError("basis shape does not match dimensions")
        _validate_basis(b)
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def t(self):
        return self.basis.shape[0]

    @property
    def symmetric(self):
        return self.n1 == self.n2 and all(is_symmetric(M, 1e-12) for M in self.basis)

    def coefficients(self, X):
        return self.basis.reshape(self.t, -1) @ np.asarray(X, dtype=float).ravel()

    def project(self, X):
        X = _check_shape(self, X)
        return np.tensordot(self.coefficients(X), self.basis, axes=1)

    def sample_member(self, rng, radius=1.0, on_sphere=False):
        gen = as_generator(rng)
        X = np.tensordot(gen.standard_normal(self.t), self.basis, axes=1)
        return _scale_to_radius(X, radius, gen, self.t, on_sphere)

    def to_dict(self):
        basis = self.name if self.name else self.basis.tolist()
        return {"variant": self.variant, "n1": self.n1, "n2": self.n2, "basis": basis}

    @classmethod
    def named(cls, name, n1, n2=None):
        n2 = n1 if n2 is None else n2
        return cls(n1, n2, named_basis(name, n1, n2), name=name)


def _indicator_basis(n1, n2, key):
    groups = {}
    for i in range(n1):
        for j in range(n2):
            groups.setdefault(key(i, j), []).append((i, j))
    mats = []
    for k in sorted(groups):
        M = np.zeros((n1, n2))
        for i, j in groups[k]:
            M[i, j] = 1.0
        mats.append(M / np.linalg.norm(M))
    return np.array(mats)


def named_basis(name, n1, n2):
    """Orthonormal bases of common linear structures, by name."""
    if name == "standard":
        return np.eye(n1 * n2).reshape(n1 * n2, n1, n2)
    if name == "diagonal":
        k = min(n1, n2)
        out = np.zeros((k, n1, n2))
        out[np.arange(k), np.arange(k), np.arange(k)] = 1.0
        return out
    if name == "toeplitz":
        return _indicator_basis(n1, n2, lambda i, j: j - i)
    if name == "hankel":
        return _indicator_basis(n1, n2, lambda i, j: i + j)
    if n1 != n2 and name in ("symmetric", "sym_toeplitz"):
        raise ValueError(f"basis {name!r} needs a square shape")
    if name == "symmetric":
        return _indicator_basis(n1, n2, lambda i, j: (min(i, j), max(i, j)))
    if name == "sym_toeplitz":
        return _indicator_basis(n1, n2, lambda i, j: abs(i - j))
    raise ValueError(f"unknown basis name {name!r}")


def _omp(M, x, s):
    """Greedy orthogonal matching pursuit with s atoms (columns of M)."""
    support = []
    r = x.copy()
    coef = np.zeros(0)
    col_norms = np.linalg.norm(M, axis=0)
    col_norms[col_norms == 0] = 1.0
    for _ in range(s):
        scores = np.abs(M.T @ r) / col_norms
        scores[support] = -1.0
        j = int(np.argmax(scores))
        if scores[j] <= 0:
            break
        support.append(j)
        coef, *_ = np.linalg.lstsq(M[:, support], x, rcond=None)
        r = x - M[:, support] @ coef
    return support, coef


@dataclass(frozen=True, eq=False)
class SparseDict(ConstraintSpec):
    """Matrices sum_i beta_i M_i with at most s nonzero coefficients."""

    n1: int
    n2: int
    atoms: np.ndarray
    s: int
    name: str = ""

    variant = "sparse_dict"

    def __post_init__(self):
        MatrixDims(self.n1, self.n2)
        a = _as_stack(self.atoms, self.n1, self.n2)
        if a.shape[1:] != (self.n1, self.n2):
            raise ValueError("atom shape does not match dimensions")
        if not 1 <= self.s <= a.shape[0]:
            raise ValueError(f"sparsity s={self.s} must lie in [1, t={a.shape[0]}]")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        M = a.reshape(a.shape[0], -1)
        ortho = np.abs(M @ M.T - np.eye(a.shape[0])).max() <= ORTHO_TOL
        object.__setattr__(self, "_orthonormal", bool(ortho))

    @property
    def t(self):
        return self.atoms.shape[0]

    @property
    def orthonormal(self):
        return self._orthonormal

    @property
    def exact_projection(self):
        return self._orthonormal

    @property
    def symmetric(self):
        return self.n1 == self.n2 and all(is_symmetric(M, 1e-12) for M in self.atoms)

    @property
    def matrix(self):
        """Vectorised dictionary, one atom per column."""
        return self.atoms.reshape(self.t, -1).T

    def project(self, X):
        X = _check_shape(self, X)
        if self._orthonormal:
            c = self.matrix.T @ X.ravel()
            keep = _top_indices(np.abs(c), self.s)
            return np.tensordot(c[keep], self.atoms[keep], axes=1)
        support, coef = _omp(self.matrix, X.ravel(), self.s)
        if not support:
            return np.zeros_like(X)
        return (self.matrix[:, support] @ coef).reshape(X.shape)

    def contains(self, X, tol=1e-8):
        X = _check_shape(self, X)
        if self._orthonormal:
            return super().contains(X, tol)
        x = X.ravel()
        limit = tol * max(1.0, float(np.linalg.norm(X)))
        if np.linalg.norm(x) <= limit:
            return True
        M = self.matrix
        if math.comb(self.t, self.s) > 10**5:
            support, coef = _omp(M, x, self.s)
            return bool(np.linalg.norm(x - M[:, support] @ coef) <= limit)
        for S in itertools.combinations(range(self.t), self.s):
            coef, *_ = np.linalg.lstsq(M[:, S], x, rcond=None)
            if np.linalg.norm(x - M[:, S] @ coef) <= limit:
                return True
        return False

    def sample_member(self, rng, radius=1.0, on_sphere=False):
        gen = as_generator(rng)
        support = gen.choice(self.t, size=self.s, replace=False)
        X = np.tensordot(gen.standard_normal(self.s), self.atoms[support], axes=1)
        return _scale_to_radius(X, radius, gen, self.s, on_sphere)

    def to_dict(self):
        atoms = self.name if self.name else self.atoms.tolist()
        return {"variant": self.variant, "n1": self.n1, "n2": self.n2, "s": self.s, "atoms": atoms}

    @classmethod
    def named(cls, name, n1, n2, s):
        return cls(n1, n2, named_basis(name, n1, n2), s, name=name)


def _check_rank(r, bound):
    if not 1 <= r <= bound:
        raise ValueError(f"rank r={r} must lie in [1, {bound}]")


@dataclass(frozen=True)
class LowRank(ConstraintSpec):
    """Matrices of rank at most r."""

    n1: int
    n2: int
    r: int

    variant = "low_rank"

    def __post_init__(self):
        MatrixDims(self.n1, self.n2)
        _check_rank(self.r, min(self.n1, self.n2))

    def project(self, X):
        return truncate_rank(_check_shape(self, X), self.r)

    def sample_member(self, rng, radius=1.0, on_sphere=False):
        gen = as_generator(rng)
        X = gen.standard_normal((self.n1, self.r)) @ gen.standard_normal((self.r, self.n2))
        dof = (self.n1 + self.n2 - self.r) * self.r
        return _scale_to_radius(X, radius, gen, dof, on_sphere)

    def to_dict(self):
        return {"variant": self.variant, "n1": self.n1, "n2": self.n2, "r": self.r}


def _support_count(norms, scale, tol):
    return int(np.sum(norms > tol * max(1.0, scale)))


@dataclass(frozen=True)
class SparseLowRank(ConstraintSpec):
    """Rank at most r with at most s1 nonzero rows and s2 nonzero columns.

    The rank must be strictly below min(s1, s2). ``relaxed`` admits equality;
    it is only used for difference sets whose doubled parameters got clamped
    to the ambient size.
    """

    n1: int
    n2: int
    r: int
    s1: int
    s2: int
    relaxed: bool = field(default=False, compare=False)

    variant = "sparse_low_rank"
    exact_projection = False

    def __post_init__(self):
        MatrixDims(self.n1, self.n2)
        if not (1 <= self.s1 <= self.n1 and 1 <= self.s2 <= self.n2):
            raise ValueError("row/column sparsity must lie within the matrix dimensions")
        bound = min(self.s1, self.s2)
        if self.r < 1 or self.r > bound or (self.r == bound and not self.relaxed):
            raise ValueError(f"sparse low-rank needs 1 <= r < min(s1, s2), got r={self.r}")

    def project(self, X):
        # alternating heuristic: pick supports by row/column norms, truncate, repeat
        X = _check_shape(self, X)
        Y = X
        best, best_err = None, np.inf
        for _ in range(_HEURISTIC_ROUNDS):
            rows = _top_indices(np.linalg.norm(Y, axis=1), self.s1)
            cols = _top_indices(np.linalg.norm(Y, axis=0), self.s2)
            Z = np.zeros_like(X)
            Z[np.ix_(rows, cols)] = truncate_rank(X[np.ix_(rows, cols)], self.r)
            err = np.linalg.norm(X - Z)
            if err < best_err - 1e-15 * max(1.0, err):
                best, best_err = Z, err
            if np.allclose(Z, Y, rtol=0, atol=1e-14):
                break
            Y = Z
        return best

    def contains(self, X, tol=1e-8):
        X = _check_shape(self, X)
        scale = float(np.linalg.norm(X))
        if scale == 0:
            return True
        return (
            numerical_rank(X, tol) <= self.r
            and _support_count(np.linalg.norm(X, axis=1), scale, tol) <= self.s1
            and _support_count(np.linalg.norm(X, axis=0), scale, tol) <= self.s2
        )

    def sample_member(self, rng, radius=1.0, on_sphere=False):
        gen = as_generator(rng)
        rows = np.sort(gen.choice(self.n1, size=self.s1, replace=False))
        cols = np.sort(gen.choice(self.n2, size=self.s2, replace=False))
        X = np.zeros((self.n1, self.n2))
        X[np.ix_(rows, cols)] = gen.standard_normal((self.s1, self.r)) @ gen.standard_normal((self.r, self.s2))
        dof = (self.s1 + self.s2 - self.r) * self.r
        return _scale_to_radius(X, radius, gen, dof, on_sphere)

    def to_dict(self):
        return {"variant": self.variant, "n1": self.n1, "n2": self.n2,
                "r": self.r, "s1": self.s1, "s2": self.s2}


def _sym_truncate(S, r):
    U, lam = symeig(S)
    return (U[:, :r] * lam[:r]) @ U[:, :r].T


@dataclass(frozen=True)
class SymLowRank(ConstraintSpec):
    """Symmetric n x n matrices of rank at most r."""

    n: int
    r: int

    variant = "sym_low_rank"

    def __post_init__(self):
        MatrixDims(self.n, self.n)
        _check_rank(self.r, self.n)

    @property
    def n1(self):
        return self.n

    @property
    def n2(self):
        return self.n

    @property
    def symmetric(self):
        return True

    def project(self, X):
        # the symmetric part is the orthogonal projection onto symmetric matrices,
        # after which keeping the r largest |eigenvalues| is Frobenius-optimal
        X = _check_shape(self, X)
        S = 0.5 * (X + X.T)
        if self.r >= self.n:
            return S
        return _sym_truncate(S, self.r)

    def sample_member(self, rng, radius=1.0, on_sphere=False):
        gen = as_generator(rng)
        U = gen.standard_normal((self.n, self.r))
        signs = gen.choice([-1.0, 1.0], size=self.r)
        X = (U * signs) @ U.T
        dof = self.n * self.r - self.r * (self.r - 1) // 2
        return _scale_to_radius(X, radius, gen, dof, on_sphere)

    def to_dict(self):
        return {"variant": self.variant, "n": self.n, "r": self.r}


@dataclass(frozen=True)
class SymSparseLowRank(ConstraintSpec):
    """Symmetric matrices of rank at most r supported on at most s rows (and columns)."""

    n: int
    r: int
    s: int

    variant = "sym_sparse_low_rank"
    exact_projection = False

    def __post_init__(self):
        MatrixDims(self.n, self.n)
        if not 1 <= self.s <= self.n:
            raise ValueError(f"row sparsity s={self.s} must lie in [1, {self.n}]")
        _check_rank(self.r, self.s)

    @property
    def n1(self):
        return self.n

    @property
    def n2(self):
        return self.n

    @property
    def symmetric(self):
        return True

    def project(self, X):
        X = _check_shape(self, X)
        S = 0.5 * (X + X.T)
        Y = S
        best, best_err = None, np.inf
        for _ in range(_HEURISTIC_ROUNDS):
            idx = _top_indices(np.linalg.norm(Y, axis=1), self.s)
            Z = np.zeros_like(S)
            Z[np.ix_(idx, idx)] = _sym_truncate(S[np.ix_(idx, idx)], self.r)
            err = np.linalg.norm(X - Z)
            if err < best_err - 1e-15 * max(1.0, err):
                best, best_err = Z, err
            if np.allclose(Z, Y, rtol=0, atol=1e-14):
                break
            Y = Z
        return best

    def contains(self, X, tol=1e-8):
        X = _check_shape(self, X)
        scale = float(np.linalg.norm(X))
        if scale == 0:
            return True
        if np.linalg.norm(X - X.T) > tol * max(1.0, scale):
            return False
        return (
            numerical_rank(X, tol) <= self.r
            and _support_count(np.linalg.norm(X, axis=1), scale, tol) <= self.s
        )

    def sample_member(self, rng, radius=1.0, on_sphere=False):
        gen = as_generator(rng)
        idx = np.sort(gen.choice(self.n, size=self.s, replace=False))
        U = np.zeros((self.n, self.r))
        U[idx] = gen.standard_normal((self.s, self.r))
        signs = gen.choice([-1.0, 1.0], size=self.r)
        X = (U * signs) @ U.T
        dof = self.s * self.r - self.r * (self.r - 1) // 2
        return _scale_to_radius(X, radius, gen, dof, on_sphere)

    def to_dict(self):
        return {"variant": self.variant, "n": self.n, "r": self.r, "s": self.s}


VARIANTS = {
    cls.variant: cls
    for cls in (Subspace, SparseDict, LowRank, SparseLowRank, SymLowRank, SymSparseLowRank)
}


def project(spec, X):
    return spec.project(X)


def contains(spec, X, tol=1e-8):
    if not tol > 0:
        raise ValueError("tol must be positive")
    return spec.contains(X, tol)


def sample_member(spec, rng, radius=1.0, on_sphere=False):
    """Random member of radius * (cone intersected with the unit ball).

    Factors (or coefficients) are Gaussian on a uniformly chosen support, the
    result is normalised and then scaled to ``radius * u**(1/k)`` where u is
    uniform and k counts the free parameters; ``on_sphere`` pins the norm to
    ``radius`` exactly.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    return spec.sample_member(rng, radius, on_sphere)


def dictionary_extremes(atoms, s):
    """Extreme singular values over all s-column submatrices of the vectorised dictionary."""
    a = np.asarray(atoms, dtype=float)
    M = a.reshape(a.shape[0], -1).T
    t = M.shape[1]
    if not 1 <= s <= t:
        raise ValueError(f"support size s={s} must lie in [1, t={t}]")
    if np.abs(M.T @ M - np.eye(t)).max() <= ORTHO_TOL:
        # every column subset of an orthonormal system is an isometry
        return DictExtremes(1.0, 1.0, 1.0, s)
    if math.comb(t, s) > EXTREMES_GUARD:
        raise ValueError(f"C({t},{s}) supports exceed the enumeration guard of {EXTREMES_GUARD}")
    lo, hi = np.inf, 0.0
    supports = itertools.combinations(range(t), s)
    while True:
        chunk = list(itertools.islice(supports, 20000))
        if not chunk:
            break
        sub = M[:, np.array(chunk)].transpose(1, 0, 2)
        sv = np.linalg.svd(sub, compute_uv=False)
        hi = max(hi, float(sv[:, 0].max()))
        if M.shape[0] < s:
            lo = 0.0
        else:
            lo = min(lo, float(sv[:, -1].min()))
    if lo <= 1e-14 * hi:
        lo = 0.0
    kappa = hi / lo if lo > 0 else math.inf
    return DictExtremes(lo, hi, kappa, s)


def difference_spec(spec):
    """Cone containing every difference of two members of ``spec``'s cone.

    Doubled parameters are clamped at the ambient sizes.
    """
    if isinstance(spec, Subspace):
        return spec
    if isinstance(spec, SparseDict):
        return SparseDict(spec.n1, spec.n2, spec.atoms, min(2 * spec.s, spec.t), name=spec.name)
    if isinstance(spec, LowRank):
        return LowRank(spec.n1, spec.n2, min(2 * spec.r, spec.n1, spec.n2))
    if isinstance(spec, SparseLowRank):
        s1, s2 = min(2 * spec.s1, spec.n1), min(2 * spec.s2, spec.n2)
        return SparseLowRank(spec.n1, spec.n2, min(2 * spec.r, s1, s2), s1, s2, relaxed=True)
    if isinstance(spec, SymLowRank):
        return SymLowRank(spec.n, min(2 * spec.r, spec.n))
    if isinstance(spec, SymSparseLowRank):
        s = min(2 * spec.s, spec.n)
        return SymSparseLowRank(spec.n, min(2 * spec.r, s), s)
    raise TypeError(f"unknown constraint spec {type(spec).__name__}")


_FIELDS = {
    "subspace": {"variant", "n1", "n2", "basis"},
    "sparse_dict": {"variant", "n1", "n2", "s", "atoms"},
    "low_rank": {"variant", "n1", "n2", "r"},
    "sparse_low_rank": {"variant", "n1", "n2", "r", "s1", "s2"},
    "sym_low_rank": {"variant", "n", "r"},
    "sym_sparse_low_rank": {"variant", "n", "r", "s"},
}


def spec_from_dict(doc):
    """Build a ConstraintSpec from its plain-dict form (see ``to_dict``)."""
    doc = dict(doc)
    variant = doc.get("variant")
    if variant not in VARIANTS:
        raise ValueError(f"constraint.variant: unknown variant {variant!r}")
    extra = set(doc) - _FIELDS[variant]
    missing = _FIELDS[variant] - set(doc)
    if extra:
        raise ValueError(f"constraint: unknown field(s) {sorted(extra)} for {variant}")
    if missing:
        raise ValueError(f"constraint: missing field(s) {sorted(missing)} for {variant}")
    if variant == "subspace":
        b = doc["basis"]
        if isinstance(b, str):
            return Subspace.named(b, doc["n1"], doc["n2"])
        return Subspace(doc["n1"], doc["n2"], np.array(b, dtype=float))
    if variant == "sparse_dict":
        a = doc["atoms"]
        if isinstance(a, str):
            return SparseDict.named(a, doc["n1"], doc["n2"], doc["s"])
        return SparseDict(doc["n1"], doc["n2"], np.array(a, dtype=float), doc["s"])
    kwargs = {k: v for k, v in doc.items() if k != "variant"}
    return VARIANTS[variant](**kwargs)
