"""Closed-form covering-number bounds for the restricted sets, plus a greedy net oracle."""
from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from .constraint_sets import (
    LowRank,
    SetKind,
    SparseDict,
    SparseLowRank,
    Subspace,
    SymLowRank,
    SymSparseLowRank,
    dictionary_extremes,
)
from .numerics import log_binom


class CoveringSource(Enum):
    PROPOSITION = "proposition"
    MINKOWSKI = "minkowski"

    @classmethod
    def parse(cls, value):
        return value if isinstance(value, cls) else cls(value)


@dataclass(frozen=True)
class CoveringConstants:
    """N(rho) <= C * (1/rho)**d for 0 < rho < rho_validity.

    ``rho_validity`` is None when the radius below which the bound holds is not
    known in closed form.
    """

    d: int
    log_C: float
    rho_validity: float | None
    source: CoveringSource

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("exponent d must be nonnegative")
        if self.rho_validity is not None and not 0 < self.rho_validity <= 1:
            raise ValueError("rho_validity must lie in (0, 1]")

    @property
    def C(self):
        return math.exp(self.log_C) if self.log_C < 709 else math.inf


def _log_kappa(spec, support):
    ext = dictionary_extremes(spec.atoms, min(support, spec.t))
    if math.isinf(ext.kappa):
        raise ValueError(f"dictionary is degenerate: sigma_min = 0 for supports of size {ext.s}")
    return math.log(ext.kappa)


def _lb(n, k):
    # supports larger than the ambient size are all of it
    return log_binom(n, min(k, n))


def _ball(spec):
    if isinstance(spec, Subspace):
        t = spec.t
        return t, t * math.log(3)
    if isinstance(spec, SparseDict):
        s = spec.s
        return s, s * (math.log(3) + _log_kappa(spec, 2 * s)) + _lb(spec.t, s)
    if isinstance(spec, LowRank):
        d = (spec.n1 + spec.n2) * spec.r
        return d, d * math.log(6 * math.sqrt(spec.r))
    if isinstance(spec, SparseLowRank):
        d = (spec.s1 + spec.s2) * spec.r
        return d, d * math.log(6 * math.sqrt(spec.r)) + _lb(spec.n1, spec.s1) + _lb(spec.n2, spec.s2)
    if isinstance(spec, SymLowRank):
        d = spec.n * spec.r
        return d, math.log(spec.r + 1) + d * math.log(6 * math.sqrt(spec.r))
    if isinstance(spec, SymSparseLowRank):
        d = spec.s * spec.r
        return d, math.log(spec.r + 1) + d * math.log(6 * math.sqrt(spec.r)) + _lb(spec.n, spec.s)
    raise TypeError(f"unknown constraint spec {type(spec).__name__}")


def _diff_ball(spec):
    if isinstance(spec, Subspace):
        t = spec.t
        return t, t * math.log(6)
    if isinstance(spec, SparseDict):
        s = spec.s
        return 2 * s, 2 * s * (math.log(6) + _log_kappa(spec, 2 * s)) + 2 * _lb(spec.t, s)
    if isinstance(spec, LowRank):
        d = 2 * (spec.n1 + spec.n2) * spec.r
        return d, d * math.log(12 * math.sqrt(spec.r))
    if isinstance(spec, SparseLowRank):
        d = 2 * (spec.s1 + spec.s2) * spec.r
        return d, (d * math.log(12 * math.sqrt(spec.r))
                   + 2 * _lb(spec.n1, spec.s1) + 2 * _lb(spec.n2, spec.s2))
    if isinstance(spec, SymLowRank):
        d = 2 * spec.n * spec.r
        return d, 2 * math.log(spec.r + 1) + d * math.log(12 * math.sqrt(spec.r))
    if isinstance(spec, SymSparseLowRank):
        d = 2 * spec.s * spec.r
        return d, (2 * math.log(spec.r + 1) + d * math.log(12 * math.sqrt(spec.r))
                   + 2 * _lb(spec.n, spec.s))
    raise TypeError(f"unknown constraint spec {type(spec).__name__}")


def _diff_cone(spec):
    if isinstance(spec, Subspace):
        t = spec.t
        return t, t * math.log(3)
    if isinstance(spec, SparseDict):
        s = spec.s
        return 2 * s, 2 * s * (math.log(3) + _log_kappa(spec, 4 * s)) + _lb(spec.t, 2 * s)
    if isinstance(spec, LowRank):
        d = 2 * (spec.n1 + spec.n2) * spec.r
        return d, d * math.log(6 * math.sqrt(2 * spec.r))
    if isinstance(spec, SparseLowRank):
        d = 4 * (spec.s1 + spec.s2) * spec.r
        return d, (d * math.log(6 * math.sqrt(2 * spec.r))
                   + _lb(spec.n1, 2 * spec.s1) + _lb(spec.n2, 2 * spec.s2))
    if isinstance(spec, SymLowRank):
        d = 2 * spec.n * spec.r
        return d, math.log(2 * spec.r + 1) + d * math.log(6 * math.sqrt(2 * spec.r))
    if isinstance(spec, SymSparseLowRank):
        d = 4 * spec.s * spec.r
        return d, (math.log(2 * spec.r + 1) + d * math.log(6 * math.sqrt(2 * spec.r))
                   + _lb(spec.n, 2 * spec.s))
    raise TypeError(f"unknown constraint spec {type(spec).__name__}")


_TABLES = {SetKind.BALL: _ball, SetKind.DIFF_BALL: _diff_ball, SetKind.DIFF_CONE: _diff_cone}


def covering_constants(spec, kind):
    """Exponent and log-prefactor of the covering bound for (variant, kind)."""
    kind = SetKind.parse(kind)
    d, log_C = _TABLES[kind](spec)
    return CoveringConstants(int(d), float(log_C), 1.0, CoveringSource.PROPOSITION)


def minkowski_constants(spec, kind):
    """Small-radius exponents from the Minkowski dimension (low-rank variants only).

    The prefactor is 1 and the radius of validity is unknown.
    """
    kind = SetKind.parse(kind)
    if isinstance(spec, SparseLowRank):
        k, r = spec.s1 + spec.s2, spec.r
        d = {SetKind.BALL: (k - r) * r + 1,
             SetKind.DIFF_BALL: 2 * (k - r) * r + 1,
             SetKind.DIFF_CONE: 4 * (k - r) * r + 1}[kind]
    elif isinstance(spec, LowRank):
        k, r = spec.n1 + spec.n2, spec.r
        d = {SetKind.BALL: (k - r) * r + 1,
             SetKind.DIFF_BALL: 2 * (k - r) * r + 1,
             SetKind.DIFF_CONE: 2 * (k - 2 * r) * r + 1}[kind]
    else:
        raise ValueError(f"no Minkowski-dimension constants for variant {spec.variant!r}")
    return CoveringConstants(int(d), 0.0, None, CoveringSource.MINKOWSKI)


def constants_for(spec, kind, source=CoveringSource.PROPOSITION):
    source = CoveringSource.parse(source)
    if source is CoveringSource.MINKOWSKI:
        return minkowski_constants(spec, kind)
    return covering_constants(spec, kind)


def covering_bound(spec, kind, rho, source=CoveringSource.PROPOSITION, rho_validity=None, consts=None):
    """log of the covering-number bound, log C + d log(1/rho).

    ``rho_validity`` overrides (or supplies, for the Minkowski source) the
    radius below which the bound is asserted.
    """
    consts = consts if consts is not None else constants_for(spec, kind, source)
    limit = rho_validity if rho_validity is not None else consts.rho_validity
    if limit is None:
        raise ValueError("radius of validity unknown for this bound; pass rho_validity explicitly")
    if not 0 < rho < limit:
        raise ValueError(f"rho={rho} outside the range of validity (0, {limit})")
    return consts.log_C + consts.d * math.log(1.0 / rho)


def greedy_net(points, rho, return_indices=False):
    """Farthest-point rho-net of a finite cloud (rows of ``points``).

    Starts from the first point and repeatedly adds the point farthest from
    the current centers until every point is within rho; ties go to the lowest
    index.
    """
    P = np.asarray(points, dtype=float)
    P = P.reshape(P.shape[0], -1)
    if P.shape[0] == 0:
        raise ValueError("point cloud is empty")
    centers = [0]
    dist = np.linalg.norm(P - P[0], axis=1)
    while True:
        j = int(np.argmax(dist))
        if dist[j] <= rho:
            break
        centers.append(j)
        np.minimum(dist, np.linalg.norm(P - P[j], axis=1), out=dist)
    idx = np.array(centers)
    return idx if return_indices else P[idx]
