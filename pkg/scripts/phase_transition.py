"""Empirical failure rate of stable recovery as the number of measurements grows.

Runs the grid-search detector on symmetric rank-one measurements of 2x2 rank-one
matrices and prints the failure rate next to the analytic bound for each m.
"""
import argparse

from stablemr.constraint_sets import SymLowRank
from stablemr.experiments import SearchConfig, failure_rate_experiment
from stablemr.measurements import EnsembleSpec, UniformBall
from stablemr.numerics import Rng
from stablemr.stability import StabilityQuery, stability_level


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6, 9])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--delta", type=float, default=1e-6)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    spec = SymLowRank(2, 1)
    ref = EnsembleSpec("sym_rank1", UniformBall(1.0), 9, 2, 2)
    eps = 1.5 * stability_level(spec, ref, "single_point", args.delta)
    q = StabilityQuery("single_point", args.delta, eps)
    print(f"delta={args.delta:g} eps={eps:.5f}")
    print(f"{'m':>3} {'fails':>6} {'rate':>6} {'ci':>17} {'bound':>8}")
    for m in args.m:
        res = failure_rate_experiment(spec, ref.with_m(m), q, SearchConfig(), args.trials, Rng(args.seed),
                                      detector="brute_force", threads=args.threads, x0_norm=0.1)
        bound = f"{res.report.p_fail:.4f}" if res.report.valid else "n/a"
        print(f"{m:>3} {res.failures:>6} {res.rate:>6.2f} [{res.lower:.3f}, {res.upper:.3f}] {bound:>8}")


if __name__ == "__main__":
    main()
