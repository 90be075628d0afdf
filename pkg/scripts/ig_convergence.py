"""Gap error of trapezoid integrated gradients against the number of steps, kernel ridge desk problems."""
import argparse

import numpy as np

from rashomon_consensus import kernel
from rashomon_consensus.synthetic import kernel_task


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--gamma", type=float, default=0.3)
    ap.add_argument("--lam", type=float, default=1e-3)
    ap.add_argument("--steps", default="10,25,50,100,200,400,1000")
    args = ap.parse_args()
    steps = [int(s) for s in args.steps.split(",")]

    print("seed,steps,gap_error")
    for seed in range(args.seeds):
        X, y = kernel_task(20, 4, seed=seed)
        fit = kernel.fit_krr(X, y, kernel.Gaussian(args.gamma), args.lam)
        z = X.mean(axis=0)
        errs = [kernel.gap_error(fit, kernel.ig_path_matrix(fit, X[0], z, s)) for s in steps]
        for s, e in zip(steps, errs):
            print(f"{seed},{s},{e!r}")
        slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
        print(f"# seed {seed}: log-log slope {slope:.3f}")


if __name__ == "__main__":
    main()
