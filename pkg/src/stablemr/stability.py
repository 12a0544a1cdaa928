"""Failure-probability bounds for stable recovery, sample-complexity thresholds and the eps(delta) curve."""
from dataclasses import dataclass, field
from enum import Enum
import math

from .constraint_sets import (
    LowRank,
    SetKind,
    SparseDict,
    SparseLowRank,
    Subspace,
    SymLowRank,
    SymSparseLowRank,
)
from .covering import CoveringSource, constants_for
from .measurements import Model, tail_probability
from .numerics import log_volume_ratio

DEFAULT_E = 2.0


class PreconditionError(ValueError):
    """A bound was requested outside the range where it is asserted."""


class StabilityKind(Enum):
    SINGLE_POINT = "single_point"
    UNIFORM_BALL = "uniform_on_ball"
    UNIFORM_CONE = "uniform_on_cone"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, SetKind):
            value = value.index
        if value in (1, 2, 3):
            return list(cls)[value - 1]
        return cls(value)

    @property
    def index(self):
        return list(StabilityKind).index(self) + 1

    @property
    def set_kind(self):
        return [SetKind.BALL, SetKind.DIFF_BALL, SetKind.DIFF_CONE][self.index - 1]


@dataclass(frozen=True)
class StabilityQuery:
    """Stability at level (delta, eps) of the given kind.

    ``norm`` is "fro" or "spectral"; None picks the norm paired with the
    measurement model.
    """

    kind: StabilityKind
    delta: float
    eps: float
    norm: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StabilityKind.parse(self.kind))
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.norm not in (None, "fro", "spectral"):
            raise ValueError(f"unknown norm {self.norm!r}")

    def norm_for(self, model):
        return self.norm or Model.parse(model).norm

    def to_dict(self):
        return {"kind": self.kind.value, "delta": self.delta, "eps": self.eps, "norm": self.norm}


@dataclass
class BoundReport:
    """The assembled bound P_i <= main_term + tail_term with every constant named."""

    model: str
    dist: str
    variant: str
    kind: str
    norm: str
    m: int
    delta: float
    eps: float
    covering_source: str
    d: int
    log_C: float
    C_conc: float
    log_factor: float
    R_eff: float
    theta: float
    theta1: float | None
    theta2: float | None
    log_main: float
    main_term: float
    tail_term: float
    p_fail: float
    vacuous: bool
    valid: bool
    validity: dict = field(default_factory=dict)

    @property
    def violations(self):
        return [k for k, v in self.validity.items() if v is not True]

    def to_row(self):
        row = {k: getattr(self, k) for k in REPORT_COLUMNS if k not in ("violations",)}
        row["violations"] = ";".join(
            k if v is False else f"{k}={v}" for k, v in self.validity.items() if v is not True)
        return row


REPORT_COLUMNS = [
    "model", "dist", "variant", "kind", "norm", "m", "delta", "eps", "covering_source",
    "d", "log_C", "C_conc", "log_factor", "R_eff", "theta", "theta1", "theta2",
    "log_main", "main_term", "tail_term", "p_fail", "vacuous", "valid", "violations",
]


def _exp(x):
    if x == -math.inf:
        return 0.0
    return math.exp(x) if x < 709 else math.inf


def concentration_constant(ens, delta, E=DEFAULT_E):
    """Per-measurement small-ball constant and the factor multiplying it in P_i.

    Returns (C, K) where C is the lemma constant and K = 3C for unstructured and
    rank-1 models, sqrt(3) C for the symmetric model. For rank-1 models C is
    evaluated at 3*delta.
    """
    model = ens.model
    if model is Model.UNSTRUCTURED:
        if ens.is_gaussian:
            C = math.sqrt(2) / (math.sqrt(math.pi) * ens.dist.sigma[0])
        else:
            C = 2 * math.exp(log_volume_ratio(ens.n1 * ens.n2)) / ens.dist.R[0]
        return C, 3 * C
    if model is Model.RANK1:
        d3 = 3 * delta
        if ens.is_gaussian:
            s1, s2 = ens.dist.sigma
            C = (1 + math.log(1 + E * s1 * s2 / d3)) / (s1 * s2)
        else:
            R1, R2 = ens.dist.R
            ratio = math.exp(log_volume_ratio(ens.n1) + log_volume_ratio(ens.n2))
            C = 4 * ratio / (R1 * R2) * (1 + math.log(E * R1 * R2 / d3))
        return C, 3 * C
    if ens.is_gaussian:
        C = 2 / (math.sqrt(math.pi) * ens.dist.sigma[0])
    else:
        C = 2 * math.sqrt(2) * math.exp(log_volume_ratio(ens.n1)) / ens.dist.R[0]
    return C, math.sqrt(3) * C


def _delta_power(model):
    # the symmetric model measures quadratically, halving every delta and eps exponent
    return 0.5 if model is Model.SYM_RANK1 else 1.0


def failure_bound(spec, ens, q, covering_source=CoveringSource.PROPOSITION, *, consts=None,
                  rho_validity=None, acknowledge_unverified=False, E=DEFAULT_E,
                  ball_radius=1.0, strict=True):
    """Bound on the probability that stability of kind ``q.kind`` fails.

    ``consts`` injects covering constants (otherwise taken from the covering
    module). ``ball_radius`` applies the bound to radius * Omega_B by
    rescaling delta and eps. With ``strict`` a violated precondition raises
    PreconditionError; otherwise the report comes back with ``valid=False``.
    """
    model = ens.model
    source = CoveringSource.parse(covering_source)
    kind = q.kind
    norm = q.norm_for(model)
    validity = {}

    if model is Model.SYM_RANK1 and not spec.symmetric:
        raise PreconditionError("symmetric rank-1 measurements need a set of symmetric matrices")
    if (spec.n1, spec.n2) != (ens.n1, ens.n2):
        raise ValueError("constraint and ensemble dimensions differ")
    if consts is None:
        consts = constants_for(spec, kind.set_kind, source)
    d = consts.d
    p = _delta_power(model)

    delta, eps = q.delta, q.eps
    if ball_radius != 1.0:
        if kind is StabilityKind.UNIFORM_CONE:
            raise ValueError("ball_radius has no meaning for stability on the cone")
        delta, eps = delta / ball_radius, eps / ball_radius

    threshold = 2 * d if model is Model.SYM_RANK1 else d
    validity["sample complexity m > %s" % ("2d" if p < 1 else "d")] = ens.m > threshold
    validity["eps < 1"] = eps < 1
    validity["norm matches model"] = norm == model.norm

    theta1 = theta2 = None
    R_eff = None
    try:
        R_eff = ens.effective_radius
    except ValueError:
        validity["Gaussian truncation radius given"] = False
    theta = math.inf
    if R_eff is not None:
        try:
            tail = tail_probability(ens)
            if model is Model.RANK1:
                theta1, theta2 = tail
                theta = theta1 + theta2
            else:
                theta = tail
        except ValueError:
            validity["R^2 > n sigma^2"] = False

    rho = consts.rho_validity if rho_validity is None else rho_validity
    if R_eff is not None:
        if rho is None:
            validity["delta < R rho"] = True if acknowledge_unverified else "unverifiable"
        else:
            validity["delta < R rho"] = delta < R_eff * rho

    C_conc, K = concentration_constant(ens, delta, E)
    if R_eff is None or not K > 0:
        log_main = math.inf
    else:
        log_main = (consts.log_C + ens.m * math.log(K) + d * math.log(R_eff)
                    + (ens.m * p - d) * math.log(delta) - ens.m * p * math.log(eps))
    main = _exp(log_main)
    tail_term = ens.m * theta if ens.is_gaussian else 0.0
    total = main + tail_term
    valid = all(v is True for v in validity.values())
    report = BoundReport(
        model=model.value, dist=ens.dist.name, variant=spec.variant, kind=kind.value,
        norm=norm, m=ens.m, delta=q.delta, eps=q.eps, covering_source=source.value,
        d=d, log_C=consts.log_C, C_conc=C_conc, log_factor=math.log(K),
        R_eff=R_eff if R_eff is not None else math.nan,
        theta=theta if ens.is_gaussian else 0.0, theta1=theta1, theta2=theta2,
        log_main=log_main, main_term=main, tail_term=tail_term, p_fail=total,
        vacuous=not total < 1, valid=valid, validity=validity,
    )
    if strict and not valid:
        failed = report.violations
        if any(k.startswith("sample complexity") for k in failed):
            raise PreconditionError(f"sample complexity violated: m={ens.m} needs m > {threshold}")
        raise PreconditionError("precondition(s) violated: " + ", ".join(failed))
    return report


def _table_value(spec, kind, model, source):
    """Right-hand side of the strict sample-complexity inequality m > value."""
    i = kind.index
    if source is CoveringSource.MINKOWSKI:
        if model is Model.SYM_RANK1:
            raise ValueError("no Minkowski-dimension thresholds for symmetric rank-1 measurements")
        if isinstance(spec, SparseLowRank):
            k, r = spec.s1 + spec.s2, spec.r
            return [(k - r) * r + 1, 2 * (k - r) * r + 1, 4 * (k - r) * r + 1][i - 1]
        if isinstance(spec, LowRank):
            k, r = spec.n1 + spec.n2, spec.r
            return [(k - r) * r + 1, 2 * (k - r) * r + 1, 2 * (k - 2 * r) * r + 1][i - 1]
        raise ValueError(f"no Minkowski-dimension threshold for variant {spec.variant!r}")
    if model is Model.SYM_RANK1:
        if not spec.symmetric:
            raise ValueError("symmetric rank-1 thresholds need a set of symmetric matrices")
        if isinstance(spec, Subspace):
            return 2 * spec.t
        if isinstance(spec, SparseDict):
            return [2 * spec.s, 4 * spec.s, 4 * spec.s][i - 1]
        if isinstance(spec, SymLowRank):
            nr = spec.n * spec.r
            return [2 * nr, 4 * nr, 4 * nr][i - 1]
        if isinstance(spec, SymSparseLowRank):
            sr = spec.s * spec.r
            return [2 * sr, 4 * sr, 8 * sr][i - 1]
        raise ValueError(f"no symmetric rank-1 threshold for variant {spec.variant!r}")
    if isinstance(spec, Subspace):
        return spec.t
    if isinstance(spec, SparseDict):
        return [spec.s, 2 * spec.s, 2 * spec.s][i - 1]
    if isinstance(spec, LowRank):
        k = (spec.n1 + spec.n2) * spec.r
        return [k, 2 * k, 2 * k][i - 1]
    if isinstance(spec, SparseLowRank):
        k = (spec.s1 + spec.s2) * spec.r
        return [k, 2 * k, 4 * k][i - 1]
    raise ValueError(f"no {model.value} threshold tabulated for variant {spec.variant!r}")


def min_sample_complexity(spec, kind, model, source=CoveringSource.PROPOSITION):
    """Smallest m satisfying the tabulated strict inequality m > value."""
    kind = StabilityKind.parse(kind)
    return _table_value(spec, kind, Model.parse(model), CoveringSource.parse(source)) + 1


def epsilon_of_delta(delta, R_eff, m, d, log_C, C_conc, theta_total=0.0, model=Model.UNSTRUCTURED):
    """Smallest eps at which the failure bound drops below one.

    For unstructured and rank-1 models this is
    3 C_conc (C/(1 - m theta))^(1/m) R_eff^(d/m) delta^(1 - d/m); the symmetric
    model works with half powers of delta and eps, giving
    3 C_conc^2 (C/(1 - m theta))^(2/m) R_eff^(2d/m) delta^(1 - 2d/m).
    """
    model = Model.parse(model)
    if m * theta_total >= 1:
        raise ValueError(f"m * theta = {m * theta_total:g} must stay below 1")
    p = _delta_power(model)
    mp = m * p
    if mp <= d:
        raise ValueError(f"need m > {d if p == 1 else 2 * d} for a vanishing eps(delta)")
    if delta == 0:
        return 0.0
    K = 3 * C_conc if p == 1 else math.sqrt(3) * C_conc
    log_eps = ((log_C - math.log1p(-m * theta_total)) / mp + math.log(K) / p
               + d / mp * math.log(R_eff) + (1 - d / mp) * math.log(delta))
    return math.exp(log_eps)


def stability_level(spec, ens, kind, delta, covering_source=CoveringSource.PROPOSITION, E=DEFAULT_E):
    """eps(delta) for a concrete (spec, ensemble, kind), pulling all constants together."""
    kind = StabilityKind.parse(kind)
    consts = constants_for(spec, kind.set_kind, covering_source)
    C_conc, _ = concentration_constant(ens, delta, E)
    theta = 0.0
    if ens.is_gaussian:
        t = tail_probability(ens)
        theta = sum(t) if isinstance(t, tuple) else t
    return epsilon_of_delta(delta, ens.effective_radius, ens.m, consts.d, consts.log_C, C_conc,
                            theta, ens.model)


def model_error_bound(epsilon_fn, L, eps_model, delta):
    """Error of an estimator when the truth is eps_model away from the set: eps(2 L eps_M + delta) + eps_M."""
    if eps_model < 0 or delta < 0 or L < 0:
        raise ValueError("L, eps_model and delta must be nonnegative")
    return epsilon_fn(2 * L * eps_model + delta) + eps_model
