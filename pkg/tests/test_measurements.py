import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from stablemr.measurements import (
    EnsembleSpec,
    Gaussian,
    MeasurementOperator,
    Model,
    UniformBall,
    draw_operator,
    tail_probability,
)
from stablemr.numerics import Rng

seeds = st.integers(0, 2**32 - 1)
ENSEMBLES = [
    EnsembleSpec("unstructured", UniformBall(1.0), 6, 2, 3),
    EnsembleSpec("unstructured", Gaussian(1.0, 5.0), 6, 2, 3),
    EnsembleSpec("rank1", UniformBall((1.0, 2.0)), 6, 2, 3),
    EnsembleSpec("rank1", Gaussian((1.0, 0.5)), 6, 2, 3),
    EnsembleSpec("sym_rank1", UniformBall(1.0), 6, 3, 3),
    EnsembleSpec("sym_rank1", Gaussian(1.0), 6, 3, 3),
]
ids = [f"{e.model.value}-{e.dist.name}" for e in ENSEMBLES]


def test_ensemble_validation():
    with pytest.raises(ValueError):
        EnsembleSpec("sym_rank1", UniformBall(1.0), 3, 2, 3)
    with pytest.raises(ValueError):
        EnsembleSpec("rank1", UniformBall(1.0), 3, 2, 2)
    with pytest.raises(ValueError):
        EnsembleSpec("unstructured", Gaussian((1.0, 1.0)), 3, 2, 2)
    with pytest.raises(ValueError):
        EnsembleSpec("unstructured", UniformBall(1.0), 0, 2, 2)
    with pytest.raises(ValueError):
        UniformBall(-1.0)


@pytest.mark.parametrize("ens", ENSEMBLES, ids=ids)
def test_dict_round_trip(ens):
    again = EnsembleSpec.from_dict(ens.to_dict())
    assert again == ens and again.digest() == ens.digest()


def test_from_dict_names_bad_field():
    doc = ENSEMBLES[0].to_dict() | {"colour": 1}
    with pytest.raises(ValueError, match="colour"):
        EnsembleSpec.from_dict(doc)


def test_uniform_unstructured_inside_ball():
    op = draw_operator(EnsembleSpec("unstructured", UniformBall(1.0), 500, 3, 3), Rng(0))
    assert np.all(np.linalg.norm(op.matrices, axis=(1, 2)) <= 1 + 1e-12)


def test_rank1_gaussian_has_rank_one():
    op = draw_operator(EnsembleSpec("rank1", Gaussian((1.0, 1.0)), 300, 3, 4), Rng(1))
    s = np.linalg.svd(op.matrices, compute_uv=False)
    assert np.all(s[:, 1] <= 1e-12 * s[:, 0])


def test_sym_rank1_is_psd():
    op = draw_operator(EnsembleSpec("sym_rank1", UniformBall(2.0), 300, 3, 3), Rng(2))
    A = op.matrices
    assert np.allclose(A, A.transpose(0, 2, 1))
    assert np.all(np.linalg.eigvalsh(A)[:, 0] >= -1e-12)


@pytest.mark.parametrize("ens", ENSEMBLES, ids=ids)
def test_factors_reproduce_matrices(ens):
    op = draw_operator(ens, Rng(3))
    assert op.m == ens.m and len(op.matrices) == ens.m
    if op.factored:
        a, b = op.factors
        assert np.abs(op.matrices - a[:, :, None] * b[:, None, :]).max() <= 1e-12


def test_apply_examples():
    op = MeasurementOperator.from_matrices(np.eye(2)[None])
    assert np.allclose(op.apply(np.diag([2.0, 5.0])), [7.0])
    assert np.all(draw_operator(ENSEMBLES[2], Rng(0)).apply(np.zeros((2, 3))) == 0)
    with pytest.raises(ValueError, match="dimension"):
        op.apply(np.zeros((3, 2)))


@pytest.mark.parametrize("ens", ENSEMBLES[2:], ids=ids[2:])
@settings(max_examples=25)
@given(seed=seeds)
def test_factored_apply_matches_dense(ens, seed):
    op = draw_operator(ens, Rng(seed))
    dense = MeasurementOperator.from_matrices(op.matrices)
    X = np.random.default_rng(seed).standard_normal((ens.n1, ens.n2))
    assert np.abs(op.apply(X) - dense.apply(X)).max() <= 1e-12


def test_adjoint_examples():
    op = draw_operator(ENSEMBLES[0], Rng(4))
    assert np.all(op.adjoint(np.zeros(6)) == 0)
    one = MeasurementOperator.from_matrices(op.matrices[:1])
    assert np.array_equal(one.adjoint([1.0]), op.matrices[0])
    with pytest.raises(ValueError, match="dimension"):
        op.adjoint(np.zeros(5))


@pytest.mark.parametrize("ens", ENSEMBLES, ids=ids)
def test_adjoint_identity(ens):
    op = draw_operator(ens, Rng(5))
    gen = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        X = gen.standard_normal((ens.n1, ens.n2))
        v = gen.standard_normal(ens.m)
        lhs = np.sum(op.adjoint(v) * X)
        worst = max(worst, abs(lhs - v @ op.apply(X)) / max(1.0, abs(lhs)))
    assert worst <= 1e-10


def test_operator_norm_examples():
    A = np.array([[1.0, 2.0], [2.0, 0.0]]) / 3
    assert MeasurementOperator.from_matrices(A[None]).operator_norm() == pytest.approx(1.0, rel=1e-8)
    two = np.array([np.eye(2), np.diag([1.0, -1.0])]) / math.sqrt(2)
    assert MeasurementOperator.from_matrices(two).operator_norm() == pytest.approx(1.0, rel=1e-8)
    dup = np.array([A, A])
    assert MeasurementOperator.from_matrices(dup).operator_norm() == pytest.approx(math.sqrt(2), rel=1e-8)


@settings(max_examples=25)
@given(seed=seeds)
def test_operator_norm_matches_svd(seed):
    op = draw_operator(ENSEMBLES[3], Rng(seed))
    want = np.linalg.svd(op.stacked, compute_uv=False)[0]
    assert op.operator_norm() == pytest.approx(want, rel=1e-8)


def test_tail_probability_examples():
    for ens in ENSEMBLES:
        if not ens.is_gaussian:
            assert np.all(np.asarray(tail_probability(ens)) == 0)
    # R = 2 sqrt(n1 n2) sigma in a 2x2 ambient
    ens = EnsembleSpec("unstructured", Gaussian(1.0, 4.0), 3, 2, 2)
    assert tail_probability(ens) == pytest.approx(math.exp(-3.2274112777602), rel=1e-10)
    assert tail_probability(ens) <= math.exp(-0.8 * 4)
    vec = EnsembleSpec("sym_rank1", Gaussian(1.0, 3.0), 3, 4, 4)
    assert tail_probability(vec) == pytest.approx(math.exp(-2 * (2.25 - 1 - math.log(2.25))), rel=1e-12)
    assert tail_probability(vec) == pytest.approx(0.4154, abs=2e-4)
    pair = tail_probability(EnsembleSpec("rank1", Gaussian((1.0, 1.0), (3.0, 4.0)), 3, 4, 4))
    assert len(pair) == 2 and pair[1] < pair[0]


def test_tail_probability_rejects_vacuous():
    with pytest.raises(ValueError, match="vacuous"):
        tail_probability(EnsembleSpec("unstructured", Gaussian(1.0, 2.0), 3, 2, 2))


@pytest.mark.parametrize("x", [1.5, 2.0, 4.0])
def test_empirical_tail_dominance(x):
    n, trials = 4, 100_000
    R = math.sqrt(x * n)
    ens = EnsembleSpec("sym_rank1", Gaussian(1.0, R), 1, n, n)
    g = Rng(int(10 * x)).generator().standard_normal((trials, n))
    p = np.mean(np.linalg.norm(g, axis=1) > R)
    sd = math.sqrt(max(p * (1 - p), 1 / trials) / trials)
    assert p <= tail_probability(ens) + 3 * sd


def test_uniform_draws_are_isotropic():
    ens = EnsembleSpec("unstructured", UniformBall(1.0), 20_000, 2, 2)
    A = draw_operator(ens, Rng(8)).matrices
    X1 = np.diag([1.0, 0.0])
    X2 = np.array([[1.0, 2.0], [-2.0, 0.5]])
    X2 /= np.linalg.norm(X2)
    half = ens.m // 2
    y1 = np.tensordot(A[:half], X1, 2)
    y2 = np.tensordot(A[half:], X2, 2)
    assert ks_2samp(y1, y2).pvalue > 0.01


@pytest.mark.parametrize("ens", ENSEMBLES, ids=ids)
def test_replay_is_bit_identical(ens):
    a = draw_operator(ens, Rng(9, 2))
    b = draw_operator(ens, Rng(9, 2))
    assert np.array_equal(a.matrices, b.matrices)
    assert a.digest() == b.digest()
    assert a.digest() != draw_operator(ens, Rng(9, 3)).digest()


def test_model_norm_pairing():
    assert Model.UNSTRUCTURED.norm == "fro"
    assert Model.parse("rank1").norm == "spectral"
