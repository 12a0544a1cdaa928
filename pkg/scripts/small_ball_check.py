"""Compare Monte Carlo small-ball probabilities with their analytic upper bounds."""
import argparse
import itertools

from stablemr.concentration import SmallBallQuery, boundary_witness, small_ball_bound, small_ball_mc
from stablemr.numerics import Rng

CASES = [
    ("unstructured", "uniform", (1.0,)),
    ("unstructured", "gaussian", (1.0,)),
    ("rank1", "uniform", (1.0, 1.0)),
    ("rank1", "gaussian", (1.0, 1.0)),
    ("sym_rank1", "uniform", (1.0,)),
    ("sym_rank1", "gaussian", (1.0,)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    print(f"{'model':<13}{'dist':<10}{'delta':>6}{'eps':>5}{'estimate':>10}{'bound':>9}{'ratio':>7}")
    for (model, dist, params), delta, eps in itertools.product(CASES, (0.01, 0.1), (0.5, 1.0)):
        q = SmallBallQuery(model, dist, args.n, args.n, params, delta, eps)
        X = boundary_witness(q, Rng(1))
        est = small_ball_mc(q, X, args.trials, Rng(2), threads=args.threads)
        bound = small_ball_bound(q)
        print(f"{model:<13}{dist:<10}{delta:>6}{eps:>5}{est.estimate:>10.4f}{bound:>9.4f}"
              f"{est.estimate / bound:>7.2f}")


if __name__ == "__main__":
    main()
