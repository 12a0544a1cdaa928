"""Print minimum measurement counts for each constraint set, set kind and model."""
import argparse

from stablemr.constraint_sets import (
    LowRank,
    SetKind,
    SparseDict,
    SparseLowRank,
    Subspace,
    SymLowRank,
    SymSparseLowRank,
)
from stablemr.covering import CoveringSource
from stablemr.stability import min_sample_complexity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--r", type=int, default=2)
    ap.add_argument("--s", type=int, default=4)
    args = ap.parse_args()
    n, r, s = args.n, args.r, args.s

    general = [
        ("toeplitz subspace", Subspace.named("toeplitz", n)),
        ("sparse (standard)", SparseDict.named("standard", n, n, s)),
        ("low rank", LowRank(n, n, r)),
        ("sparse low rank", SparseLowRank(n, n, r, s, s)),
    ]
    symmetric = [
        ("symmetric subspace", Subspace.named("sym_toeplitz", n)),
        ("sym low rank", SymLowRank(n, r)),
        ("sym sparse low rank", SymSparseLowRank(n, r, s)),
    ]
    kinds = [SetKind.BALL, SetKind.DIFF_BALL, SetKind.DIFF_CONE]
    print(f"n={n} r={r} s={s}; columns: ball, difference ball, difference cone")
    for model in ("unstructured", "rank1"):
        for source in (CoveringSource.PROPOSITION, CoveringSource.MINKOWSKI):
            print(f"\n[{model}, {source.value}]")
            for name, spec in general:
                try:
                    row = [min_sample_complexity(spec, k, model, source) for k in kinds]
                except ValueError:
                    continue
                print(f"  {name:<22}" + "".join(f"{v:>8}" for v in row))
    print("\n[sym_rank1]")
    for name, spec in symmetric:
        row = [min_sample_complexity(spec, k, "sym_rank1") for k in kinds]
        print(f"  {name:<22}" + "".join(f"{v:>8}" for v in row))


if __name__ == "__main__":
    main()
