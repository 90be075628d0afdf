"""Utility against tolerance on the synthetic additive task, plus one explained instance.

Prints the utility curve CSV, then for one instance the consensus attribution
bars, the Hasse diagram and the aggregate scores of a sampled ensemble.
"""
import argparse

import numpy as np

from rashomon_consensus import additive, consensus
from rashomon_consensus.additive import BasisSpec
from rashomon_consensus.providers import additive_provider
from rashomon_consensus.synthetic import additive_task


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--points", type=int, default=20)
    ap.add_argument("--max-excess", type=float, default=0.2, help="largest excess tolerance, in units of Var(y)")
    ap.add_argument("--explain", type=int, default=0, help="row to explain")
    ap.add_argument("--excess", type=float, default=0.01, help="excess tolerance for the explained row, units of Var(y)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    X, y = additive_task(args.n, seed=args.seed)
    fit = additive.fit(X, y, BasisSpec.splines(4, [1, 2], 2, 4), ["x0", "x1", "x2", "dummy"])
    provider = additive_provider(fit, X, fit.train_loss)
    grid = fit.train_loss + np.linspace(0.0, args.max_excess * y.var(), args.points)
    print(consensus.curve_csv(consensus.epsilon_linesearch(provider, X[:args.instances], grid)), end="")

    p = provider.at_epsilon(fit.train_loss + args.excess * y.var())
    x = X[args.explain]
    e = consensus.explain_instance(p, x, args.explain)
    print("\nfeature,sign,lo,hi,center")
    for row in e.bar_rows():
        print(",".join([row[0], row[1]] + [f"{v:.4f}" for v in row[2:]]))
    print()
    print(e.order.to_dot(), end="")
    members = p.family.sample(1000, np.random.default_rng(args.seed))
    comp = consensus.comparators(consensus.ensemble_attributions(p, x, members))
    print("\nfeature,attribution,variance,mean_rank")
    for name, mean, var, rank in comp.rows(e.labels):
        print(f"{name},{mean:.4f},{var:.2e},{rank:.2f}")
    print(f"embedding violations: {len(consensus.embedding_check(e.order, comp))}")


if __name__ == "__main__":
    main()
