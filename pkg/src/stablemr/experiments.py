"""Desk-scale experiments: adversarial failure search, a grid oracle, trials and recovery."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import itertools
import json
import math
import time

import numpy as np

from .constraint_sets import (
    LowRank,
    SetKind,
    SparseDict,
    SparseLowRank,
    Subspace,
    SymLowRank,
    SymSparseLowRank,
    difference_spec,
    sample_member,
)
from .covering import CoveringSource
from .measurements import draw_operator
from .numerics import as_generator, as_rng, matrix_norm, sphere_points, wilson_interval
from .stability import PreconditionError, StabilityKind, failure_bound

SHELL_SLACK = 1e-9
# sufficient decrease: f(new) <= f(old) - ARMIJO / step * ||new - old||^2
ARMIJO = 0.25
GRID_POINTS = 1 << 21
_SCHATTEN_STAGES = (4, 16, 64, 256, 1024)


@dataclass(frozen=True)
class SearchConfig:
    """Settings for the adversarial gain search and the grid oracle.

    ``normalization`` is "query" (use the query norm), "fro" or "spectral".
    ``resolution`` and ``refine_rounds`` only affect the grid oracle.
    """

    restarts: int = 32
    max_iters: int = 500
    step: str = "backtracking"
    normalization: str = "query"
    resolution: int = 201
    refine_rounds: int = 40
    tol: float = 1e-12

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1:
            raise ValueError("restarts and max_iters must be at least 1")
        if self.step not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step rule {self.step!r}")
        if self.normalization not in ("query", "fro", "spectral"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if not 2 <= self.resolution <= 401:
            raise ValueError("grid resolution must lie in [2, 401]")

    def norm(self, query_norm):
        return query_norm if self.normalization == "query" else self.normalization


@dataclass
class GainResult:
    """Smallest measurement norm found over the searched set, and where.

    For the cone kind the searched set is the unit sphere of the norm; for the
    bounded kinds it is the part of the set at norm at least eps. ``parts``
    holds the two members whose difference is ``argmin`` (bounded kinds).
    """

    min_gain: float
    argmin: np.ndarray | None
    converged: bool = True
    parts: tuple | None = None


def _gain(op, X):
    return float(np.linalg.norm(op.apply(X)))


def _schatten(Y, p):
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    top = s[0]
    if top == 0:
        return 0.0, np.zeros_like(Y)
    w = s / top
    val = top * np.sum(w ** p) ** (1.0 / p)
    g = (U * (s / val) ** (p - 1)) @ Vt
    return val, g


def _unit(Y, norm):
    n = matrix_norm(Y, norm)
    return (Y / n, n) if n > 0 else (Y, 0.0)


def _cone_restart(op, K, norm, cfg, gen, eta0):
    """One projected-gradient run on the scale-free ratio ||A(Y)||^2 / N(Y)^2."""
    Y = sample_member(K, gen, 1.0, on_sphere=True)
    stages = _SCHATTEN_STAGES if norm == "spectral" else (None,)
    converged = False
    budget = max(1, cfg.max_iters // len(stages))
    for p in stages:
        def measure(Z):
            if p is None:
                n = np.linalg.norm(Z)
                return n, (Z / n if n > 0 else Z)
            return _schatten(Z, p)

        def objective(Z):
            n, _ = measure(Z)
            if n == 0:
                return math.inf
            r = op.apply(Z)
            return float(r @ r) / n ** 2

        n, _ = measure(Y)
        Y = Y / n
        f = objective(Y)
        eta = eta0
        converged = False
        for _ in range(budget):
            n, dn = measure(Y)
            r = op.apply(Y)
            grad = (2 * op.adjoint(r) - 2 * f * n * dn) / n ** 2
            accepted = False
            while eta > 1e-30 * eta0:
                Z = K.project(Y - eta * grad)
                nz, _ = measure(Z)
                if nz > 0:
                    Z = Z / nz
                    fz = objective(Z)
                    if cfg.step == "fixed" or fz <= f - ARMIJO / eta * float(np.sum((Z - Y) ** 2)):
                        accepted = True
                        break
                eta *= 0.5
            if not accepted:
                converged = True
                break
            change = f - fz
            move = float(np.linalg.norm(Z - Y))
            Y, f = Z, fz
            if cfg.step == "backtracking":
                eta *= 2.0
            if move <= 1e-14 or f <= 1e-28 or abs(change) <= cfg.tol * max(f, 1e-300):
                converged = True
                break
    Y, _ = _unit(Y, norm)
    return Y, converged


def _ball_project(spec, X):
    Z = spec.project(X)
    n = np.linalg.norm(Z)
    return Z / n if n > 1 else Z


def _bounded_restart(op, spec, kind, norm, shell, x0, cfg, gen, eta0):
    """Projected gradient on ||A(X1 - X2)||^2 over pairs in the unit ball at distance >= shell."""
    two = kind is SetKind.DIFF_BALL

    def feasible(X1, X2):
        D = X1 - X2
        nd = matrix_norm(D, norm)
        if nd < shell:
            if nd == 0:
                return None
            if two:
                c = shell / nd
                X1, X2 = _ball_project(spec, c * X1), _ball_project(spec, c * X2)
            else:
                for _ in range(20):
                    X1 = _ball_project(spec, X2 + (shell / nd) * D)
                    D = X1 - X2
                    nd = matrix_norm(D, norm)
                    if nd >= shell or nd == 0:
                        break
            D = X1 - X2
            nd = matrix_norm(D, norm)
            if nd < shell * (1 - 1e-12):
                return None
        if two and nd > shell:
            # the set is star-shaped, so the minimum sits on the shell
            c = shell / nd
            X1, X2 = c * X1, c * X2
        return X1, X2

    pair = None
    for _ in range(200):
        X1 = sample_member(spec, gen, 1.0)
        X2 = sample_member(spec, gen, 1.0) if two else x0
        pair = feasible(X1, X2)
        if pair is not None:
            break
    if pair is None:
        return None, False
    X1, X2 = pair
    r = op.apply(X1 - X2)
    f = float(r @ r)
    eta = eta0
    converged = False
    for _ in range(cfg.max_iters):
        g = 2 * op.adjoint(op.apply(X1 - X2))
        accepted = False
        while eta > 1e-30 * eta0:
            Z1 = _ball_project(spec, X1 - eta * g)
            Z2 = _ball_project(spec, X2 + eta * g) if two else X2
            cand = feasible(Z1, Z2)
            if cand is not None:
                Z1, Z2 = cand
                r = op.apply(Z1 - Z2)
                fz = float(r @ r)
                move = float(np.sum((Z1 - X1) ** 2) + np.sum((Z2 - X2) ** 2))
                if cfg.step == "fixed" or fz <= f - ARMIJO / eta * move:
                    accepted = True
                    break
            eta *= 0.5
        if not accepted:
            converged = True
            break
        change = f - fz
        X1, X2, f = Z1, Z2, fz
        if cfg.step == "backtracking":
            eta *= 2.0
        if move <= 1e-28 or abs(change) <= cfg.tol * max(f, 1e-300):
            converged = True
            break
    return (X1, X2), converged


def restricted_gain(op, spec, kind, cfg=SearchConfig(), rng=0, *, norm="fro", x0=None, eps=None):
    """Smallest ||A(X)||_2 found by multi-start projected gradient.

    kind DIFF_CONE searches unit-norm members of the difference cone (with
    ||X||_F <= 1/eps enforced when the norm is spectral and eps is given).
    kind BALL searches X1 - x0 and kind DIFF_BALL searches X1 - X2 over members
    X1, X2 of the unit ball, keeping the norm of the difference at least eps.
    The value is an upper bound on the true minimum.
    """
    kind = SetKind.parse(kind)
    norm = cfg.norm(norm)
    gen = as_generator(rng)
    L = op.operator_norm()
    if op.m == 0 or L == 0:
        K = difference_spec(spec) if kind is SetKind.DIFF_CONE else spec
        X = sample_member(K, gen, 1.0, on_sphere=True)
        X, _ = _unit(X, norm)
        if kind is SetKind.DIFF_CONE:
            return GainResult(0.0, X, True)
        if eps is None:
            raise ValueError("bounded kinds need eps")
        if kind is SetKind.BALL:
            return _bounded_any(spec, kind, norm, eps, x0, gen, op)
        return _bounded_any(spec, kind, norm, eps, None, gen, op)
    eta0 = 1.0 / L ** 2
    best = GainResult(math.inf, None, False)
    all_converged = True
    if kind is SetKind.DIFF_CONE:
        K = difference_spec(spec)
        cap = 1.0 / eps if (eps is not None and norm == "spectral") else None
        for _ in range(cfg.restarts):
            Y, conv = _cone_restart(op, K, norm, cfg, gen, eta0)
            all_converged &= conv
            if cap is not None and np.linalg.norm(Y) > cap * (1 + 1e-12):
                continue
            g = _gain(op, Y)
            if g < best.min_gain:
                best = GainResult(g, Y, True)
    else:
        if eps is None:
            raise ValueError("bounded kinds need eps")
        if kind is SetKind.BALL and x0 is None:
            raise ValueError("the single-point kind needs x0")
        shell = eps * (1 + SHELL_SLACK)
        for _ in range(cfg.restarts):
            pair, conv = _bounded_restart(op, spec, kind, norm, shell, x0, cfg, gen, eta0)
            all_converged &= conv
            if pair is None:
                continue
            D = pair[0] - pair[1]
            g = _gain(op, D)
            if g < best.min_gain:
                best = GainResult(g, D, True, pair)
    best.converged = all_converged and best.argmin is not None
    return best


def _bounded_any(spec, kind, norm, eps, x0, gen, op):
    shell = eps * (1 + SHELL_SLACK)
    for _ in range(1000):
        X1 = sample_member(spec, gen, 1.0)
        X2 = x0 if kind is SetKind.BALL else sample_member(spec, gen, 1.0)
        if matrix_norm(X1 - X2, norm) >= shell:
            return GainResult(_gain(op, X1 - X2), X1 - X2, True, (X1, X2))
    return GainResult(math.inf, None, False)


# ---- grid oracle -----------------------------------------------------------------


@dataclass
class _Family:
    """Scale-free parametrisation of a cone: builder(params, branch) -> matrices."""

    periodic: list
    branches: list
    build: object

    @property
    def n_params(self):
        return len(self.periodic)


def _sphere_axes(k):
    # angles of S^{k-1}: k-2 polar angles in [0, pi] then one in [0, 2 pi)
    return [False] * max(k - 2, 0) + ([True] if k >= 2 else [])


def _sphere(params, k):
    if k == 1:
        return np.ones((params.shape[0], 1))
    return sphere_points(params)


def _family(K):
    n1, n2 = K.n1, K.n2
    if isinstance(K, Subspace):
        t = K.t
        B = K.basis.reshape(t, -1)
        return _Family(_sphere_axes(t), [None],
                       lambda P, b: (_sphere(P, t) @ B).reshape(-1, n1, n2))
    if isinstance(K, SparseDict):
        s = K.s
        A = K.atoms.reshape(K.t, -1)
        supports = list(itertools.combinations(range(K.t), s))
        return _Family(_sphere_axes(s), supports,
                       lambda P, S: (_sphere(P, s) @ A[list(S)]).reshape(-1, n1, n2))
    if isinstance(K, LowRank):
        if K.r >= min(n1, n2):
            N = n1 * n2
            return _Family(_sphere_axes(N), [None], lambda P, b: _sphere(P, N).reshape(-1, n1, n2))
        if K.r == 1:
            a1, a2 = _sphere_axes(n1), _sphere_axes(n2)
            k1 = len(a1)

            def rank_one(P, b):
                u = _sphere(P[:, :k1], n1)
                v = _sphere(P[:, k1:], n2)
                return u[:, :, None] * v[:, None, :]
            return _Family(a1 + a2, [None], rank_one)
    if isinstance(K, SparseLowRank) and K.r == 1:
        a1, a2 = _sphere_axes(K.s1), _sphere_axes(K.s2)
        k1 = len(a1)
        branches = list(itertools.product(itertools.combinations(range(n1), K.s1),
                                          itertools.combinations(range(n2), K.s2)))

        def sparse_rank_one(P, b):
            u = np.zeros((P.shape[0], n1))
            v = np.zeros((P.shape[0], n2))
            u[:, list(b[0])] = _sphere(P[:, :k1], K.s1)
            v[:, list(b[1])] = _sphere(P[:, k1:], K.s2)
            return u[:, :, None] * v[:, None, :]
        return _Family(a1 + a2, branches, sparse_rank_one)
    if isinstance(K, SymLowRank):
        n = K.n
        if K.r >= n and n == 2:
            # rotation angle and a signed spectrum on the unit circle
            def signed_spectrum(P, b):
                th, ph = P[:, 0], P[:, 1]
                c, s = np.cos(th), np.sin(th)
                l1, l2 = np.cos(ph), np.sin(ph)
                out = np.empty((P.shape[0], 2, 2))
                out[:, 0, 0] = l1 * c * c + l2 * s * s
                out[:, 1, 1] = l1 * s * s + l2 * c * c
                out[:, 0, 1] = out[:, 1, 0] = (l1 - l2) * c * s
                return out
            return _Family([False, True], [None], signed_spectrum)
        if K.r >= n:
            B = Subspace.named("symmetric", n).basis.reshape(-1, n * n)
            t = B.shape[0]
            return _Family(_sphere_axes(t), [None],
                           lambda P, b: (_sphere(P, t) @ B).reshape(-1, n, n))
        if K.r == 1:
            axes = _sphere_axes(n)

            def sym_rank_one(P, sign):
                u = _sphere(P, n)
                return sign * u[:, :, None] * u[:, None, :]
            return _Family(axes, [1.0, -1.0], sym_rank_one)
    if isinstance(K, SymSparseLowRank) and K.r == 1:
        n, s = K.n, K.s
        axes = _sphere_axes(s)
        branches = [(S, sg) for S in itertools.combinations(range(n), s) for sg in (1.0, -1.0)]

        def sym_sparse_rank_one(P, b):
            u = np.zeros((P.shape[0], n))
            u[:, list(b[0])] = _sphere(P, s)
            return b[1] * u[:, :, None] * u[:, None, :]
        return _Family(axes, branches, sym_sparse_rank_one)
    raise ValueError(f"no grid parametrisation for {K.variant} with these parameters")


def _batch_norm(X, norm):
    if norm == "fro":
        return np.sqrt(np.einsum("kij,kij->k", X, X))
    return np.linalg.norm(X, ord=2, axis=(1, 2))


class _Domain:
    """Searched set of the oracle: parameters -> (difference matrices, feasibility)."""

    def __init__(self, op, spec, kind, norm, eps, x0):
        self.op, self.kind, self.norm = op, kind, norm
        self.S = op.stacked.T if op.m else None
        if kind is SetKind.DIFF_CONE:
            fam = _family(difference_spec(spec))
            self.fams = [fam]
            self.cap = 1.0 / eps if (eps is not None and norm == "spectral") else None
        else:
            if eps is None:
                raise ValueError("bounded kinds need eps")
            fam = _family(spec)
            self.fams = [fam] if kind is SetKind.BALL else [fam, fam]
            self.shell = eps * (1 + SHELL_SLACK)
            if kind is SetKind.BALL:
                if x0 is None:
                    raise ValueError("the single-point kind needs x0")
                self.x0 = np.asarray(x0, dtype=float)
        self.periodic = []
        self.lo, self.hi = [], []
        for f in self.fams:
            self.periodic += f.periodic
            if kind is not SetKind.DIFF_CONE:
                self.periodic += [False]  # radius in [0, 1]
        for per in self.periodic:
            self.lo.append(0.0)
            self.hi.append(2 * math.pi if per else math.pi)
        if kind is not SetKind.DIFF_CONE:
            # the radius axis closes each family's block
            idx = 0
            for f in self.fams:
                idx += f.n_params
                self.hi[idx] = 1.0
                idx += 1
        self.lo, self.hi = np.array(self.lo), np.array(self.hi)
        self.branches = list(itertools.product(*[f.branches for f in self.fams]))
        if len(self.periodic) > 4:
            raise ValueError(f"searched set has {len(self.periodic)} parameters; the grid oracle allows 4")

    @property
    def n_params(self):
        return len(self.periodic)

    def _member(self, fam, P, branch):
        Y = fam.build(P[:, :fam.n_params], branch)
        nrm = np.sqrt(np.einsum("kij,kij->k", Y, Y))
        nrm[nrm == 0] = 1.0
        return Y / nrm[:, None, None] * P[:, fam.n_params][:, None, None]

    def evaluate(self, P, branch):
        """Gains and feasibility for parameter rows P on one branch."""
        if self.kind is SetKind.DIFF_CONE:
            Y = self.fams[0].build(P, branch[0])
            nrm = _batch_norm(Y, self.norm)
            ok = nrm > 0
            nrm[~ok] = 1.0
            D = Y / nrm[:, None, None]
            if self.cap is not None:
                ok &= np.sqrt(np.einsum("kij,kij->k", D, D)) <= self.cap * (1 + 1e-12)
        else:
            k = self.fams[0].n_params + 1
            X1 = self._member(self.fams[0], P[:, :k], branch[0])
            if self.kind is SetKind.BALL:
                X2 = np.broadcast_to(self.x0, X1.shape)
            else:
                X2 = self._member(self.fams[1], P[:, k:], branch[1])
            D = X1 - X2
            ok = _batch_norm(D, self.norm) >= self.shell
        flat = D.reshape(D.shape[0], -1)
        g = np.linalg.norm(flat @ self.S, axis=1) if self.S is not None else np.zeros(D.shape[0])
        return g, ok, D

    def axis_values(self, res):
        vals = []
        for per, lo, hi in zip(self.periodic, self.lo, self.hi):
            vals.append(np.linspace(lo, hi, res, endpoint=not per))
        return vals


def brute_force_gain(op, spec, kind, resolution=201, *, norm="fro", x0=None, eps=None,
                     refine_rounds=40, n_refine=8, chunk=1 << 17, max_points=GRID_POINTS):
    """Grid minimum of ||A(X)||_2 over a parametrisation of the searched set.

    Unit factors are parametrised by hyperspherical angles, symmetric 2x2
    matrices of rank two by a rotation angle and a signed spectrum, and ball
    members by an extra radius axis. The best grid points are then refined by
    a pattern search on 7-point local grids whose width halves whenever no
    neighbour improves. Every evaluated point is a member of the searched set, so
    the result is an upper bound on the minimum that converges to it as the
    grid is refined. The per-axis resolution is lowered so one branch has at
    most ``max_points`` grid points.
    """
    kind = SetKind.parse(kind)
    if resolution > 401:
        raise ValueError("resolution is capped at 401 per axis")
    dom = _Domain(op, spec, kind, norm, eps, x0)
    k = dom.n_params
    while k and resolution > 2 and resolution ** k > max_points:
        resolution -= 1
    axes = dom.axis_values(resolution)
    total = resolution ** k
    cands = []
    for bi, branch in enumerate(dom.branches):
        for start in range(0, total, chunk):
            flat = np.arange(start, min(total, start + chunk))
            if k:
                idx = np.unravel_index(flat, (resolution,) * k)
                P = np.stack([axes[j][idx[j]] for j in range(k)], axis=1)
            else:
                P = np.zeros((flat.size, 0))
            g, ok, _ = dom.evaluate(P, branch)
            g = np.where(ok, g, np.inf)
            top = np.argsort(g, kind="stable")[:n_refine]
            cands += [(float(g[i]), bi, start + int(i), P[i]) for i in top if np.isfinite(g[i])]
    if not cands:
        return GainResult(math.inf, None, False)
    cands.sort(key=lambda c: (c[0], c[1], c[2]))
    step = np.array([(hi - lo) / max(resolution - 1, 1) for lo, hi in zip(dom.lo, dom.hi)])
    best_g, best_D = math.inf, None
    for g0, bi, _, p0 in cands[:n_refine]:
        branch = dom.branches[bi]
        center, gc = p0.copy(), g0
        half = step.copy()
        offs = np.linspace(-1.0, 1.0, 7)
        grid = np.stack(np.meshgrid(*[offs] * k, indexing="ij"), -1).reshape(-1, k)
        radial = ~np.array(dom.periodic, dtype=bool) & (dom.hi == 1.0)
        shrinks = steps = 0
        # pattern search: keep the window while it improves, halve it when it stalls
        while k and shrinks < refine_rounds and steps < 25 * refine_rounds:
            steps += 1
            P = center + grid * half
            P[:, radial] = np.clip(P[:, radial], 0.0, 1.0)
            g, ok, _ = dom.evaluate(P, branch)
            g = np.where(ok, g, np.inf)
            j = int(np.argmin(g))
            if g[j] < gc:
                center, gc = P[j], float(g[j])
            else:
                half = half * 0.5
                shrinks += 1
        g, ok, D = dom.evaluate(center[None, :], branch)
        if ok[0] and g[0] < best_g:
            best_g, best_D = float(g[0]), D[0]
    return GainResult(best_g, best_D, best_D is not None)


# ---- trials ------------------------------------------------------------------------


@dataclass
class TrialRecord:
    trial_id: int
    seed: list
    ensemble_digest: str
    query: dict
    detector: str
    m: int
    failed: bool
    min_gain: float
    witness: list | None
    wall_time: float = 0.0

    def to_dict(self, wall_time=True):
        out = {
            "trial_id": self.trial_id, "seed": self.seed, "ensemble_digest": self.ensemble_digest,
            "query": self.query, "detector": self.detector, "m": self.m, "failed": self.failed,
            "min_gain": _json_float(self.min_gain), "witness": self.witness,
        }
        if wall_time:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, wall_time=True):
        return json.dumps(self.to_dict(wall_time), separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["min_gain"] = float(doc["min_gain"]) if doc["min_gain"] is not None else math.inf
        return cls(**doc)


def _json_float(x):
    return None if not math.isfinite(x) else x


def verify_witness(spec, kind, D, op, delta, eps, norm, parts=None, tol=1e-8):
    """Check a failure witness without using the search code: membership, norm, gain."""
    kind = SetKind.parse(kind)
    D = np.asarray(D, dtype=float)
    if not matrix_norm(D, norm) > eps:
        return False
    if not _gain(op, D) <= delta:
        return False
    if kind is SetKind.DIFF_CONE:
        return difference_spec(spec).contains(D, tol) and np.linalg.norm(D) <= 1 + tol
    if parts is None:
        return False
    X1, X2 = (np.asarray(P, dtype=float) for P in parts)
    if not np.allclose(X1 - X2, D, atol=1e-12):
        return False
    return all(spec.contains(X, tol) and np.linalg.norm(X) <= 1 + tol for X in (X1, X2))


def _cone_witness(g, Y, delta, eps):
    """Scale the unit-norm minimiser into the eps-exterior if it fails there.

    Members of the difference cone cut to the unit Frobenius ball are t*Y with
    t <= 1/||Y||_F; the gain grows linearly with t, so failure means
    eps * g < delta with room for t just above eps.
    """
    t_max = 1.0 / np.linalg.norm(Y)
    t = t_max if g == 0 else min(delta / g, t_max)
    t *= 1 - 1e-12
    if t > eps:
        return t * Y
    return None


def stability_trial(spec, ens, q, cfg=SearchConfig(), rng=0, *, detector="search", op=None,
                    x0=None, x0_norm=None, trial_id=0):
    """One Monte Carlo draw of the stability failure event.

    Sub-streams of ``rng``: 0 draws the operator, 1 the point x0 (single-point
    kind), 2 seeds the search. ``x0_norm`` pins the Frobenius norm of x0;
    otherwise x0 is a random member of the unit ball.
    """
    rng = as_rng(rng)
    t0 = time.perf_counter()
    if op is None:
        op = draw_operator(ens, rng.child(0))
    kind = q.kind.set_kind
    norm = q.norm_for(ens.model)
    if kind is SetKind.BALL and x0 is None:
        if x0_norm is None:
            x0 = sample_member(spec, rng.child(1).generator(), 1.0)
        else:
            x0 = sample_member(spec, rng.child(1).generator(), x0_norm, on_sphere=True)
    if detector == "search":
        res = restricted_gain(op, spec, kind, cfg, rng.child(2).generator(), norm=norm, x0=x0, eps=q.eps)
    elif detector == "brute_force":
        res = brute_force_gain(op, spec, kind, cfg.resolution, norm=norm, x0=x0, eps=q.eps,
                               refine_rounds=cfg.refine_rounds)
    else:
        raise ValueError(f"unknown detector {detector!r}")
    witness = None
    parts = res.parts
    if res.argmin is not None:
        if kind is SetKind.DIFF_CONE:
            witness = _cone_witness(res.min_gain, res.argmin, q.delta, q.eps)
        elif res.min_gain <= q.delta:
            witness = res.argmin
            if parts is None:
                parts = (witness + x0, x0) if kind is SetKind.BALL else None
    failed = False
    if witness is not None:
        failed = verify_witness(spec, kind, witness, op, q.delta, q.eps, norm, parts)
        if not failed:
            witness = None
    return TrialRecord(
        trial_id=int(trial_id), seed=[rng.master_seed, rng.stream_id],
        ensemble_digest=op.digest(), query=q.to_dict(), detector=detector, m=op.m,
        failed=bool(failed), min_gain=float(res.min_gain),
        witness=None if witness is None else witness.tolist(),
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class ExperimentResult:
    failures: int
    trials: int
    rate: float
    lower: float
    upper: float
    report: object
    informative: bool
    consistent: bool
    records: list = field(default_factory=list)

    def summary_row(self):
        rep = self.report
        return {
            "trials": self.trials, "failures": self.failures, "rate": self.rate,
            "ci_lower": self.lower, "ci_upper": self.upper,
            "p_fail": rep.p_fail if rep is not None else math.nan,
            "bound_valid": rep.valid if rep is not None else False,
            "informative": self.informative, "consistent": self.consistent,
        }


def failure_rate_experiment(spec, ens, q, cfg=SearchConfig(), n_trials=100, rng=0, *,
                            detector="search", threads=1, x0_norm=None,
                            covering_source=CoveringSource.PROPOSITION, done=None, on_record=None):
    """Empirical failure rate over independent trials next to the analytic bound.

    Trial k uses ``rng.child(k)``, so results do not depend on ``threads``.
    ``done`` maps trial ids to records already on disk (they are reused, not
    rerun); ``on_record`` is called with each new record in trial order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    rng = as_rng(rng)
    done = dict(done or {})
    todo = [k for k in range(n_trials) if k not in done]

    def run(k):
        return stability_trial(spec, ens, q, cfg, rng.child(k), detector=detector,
                               x0_norm=x0_norm, trial_id=k)

    fresh = {}
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            for rec in pool.map(run, todo):
                fresh[rec.trial_id] = rec
                if on_record:
                    on_record(rec)
    else:
        for k in todo:
            rec = run(k)
            fresh[k] = rec
            if on_record:
                on_record(rec)
    records = [done[k] if k in done else fresh[k] for k in range(n_trials)]
    failures = sum(r.failed for r in records)
    lo, hi = wilson_interval(failures, n_trials)
    rate = failures / n_trials
    try:
        report = failure_bound(spec, ens, q, covering_source, strict=False)
    except PreconditionError:
        report = None
    informative = report is not None and report.valid and not report.vacuous
    halfwidth = 0.5 * (hi - lo)
    consistent = (not informative) or rate <= report.p_fail + halfwidth
    return ExperimentResult(failures, n_trials, rate, lo, hi, report, informative, consistent, records)


# ---- recovery ----------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    step: str = "backtracking"
    tol: float = 1e-14

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step rule {self.step!r}")


@dataclass
class RecoveryResult:
    estimate: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: list


def objective_gradient(op, X, y):
    """Gradient of ||A(X) - y||^2."""
    return 2 * op.adjoint(op.apply(X) - y)


def recover(op, y, spec, radius=None, cfg=SolverConfig(), init=None):
    """Projected gradient for min ||A(X) - y||^2 over the cone (optionally cut to a ball).

    Steps start at 1/L^2, double after every accepted step and halve until the
    Armijo condition holds, so the objective never increases.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != op.m:
        raise ValueError(f"dimension mismatch: y has length {y.shape[0]}, operator has m={op.m}")

    def proj(Z):
        Z = spec.project(Z)
        if radius is not None:
            n = np.linalg.norm(Z)
            if n > radius:
                Z = Z * (radius / n)
        return Z

    X = proj(np.zeros((op.n1, op.n2)) if init is None else np.asarray(init, dtype=float))
    r = op.apply(X) - y
    f = float(r @ r)
    history = [f]
    L = op.operator_norm()
    if L == 0:
        return RecoveryResult(X, f, 0, True, history)
    eta0 = 1.0 / L ** 2
    eta = eta0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        g = 2 * op.adjoint(r)
        accepted = False
        while eta > 1e-30 * eta0:
            Z = proj(X - eta * g)
            rz = op.apply(Z) - y
            fz = float(rz @ rz)
            move = float(np.sum((Z - X) ** 2))
            if fz <= f - ARMIJO / eta * move or (cfg.step == "fixed" and fz <= f):
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            converged = True
            break
        X, r, f = Z, rz, fz
        history.append(f)
        if cfg.step == "backtracking":
            eta *= 2.0
        if f <= 1e-300 or move <= cfg.tol ** 2 * max(1.0, float(np.sum(X ** 2))):
            converged = True
            break
    return RecoveryResult(X, f, it, converged, history)
