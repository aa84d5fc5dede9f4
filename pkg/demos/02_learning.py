"""
Parameter learning from complete trajectories.

Sample paths from a known network, reduce them to dwell times and
transition counts, and compare the maximum-likelihood rates against the
truth as the amount of data grows.

    python3 demos/02_learning.py
"""
import argparse

import numpy as np

from ctbn_au.learning import collect_stats, mle
from ctbn_au.model import CtbnModel, NodeSpec
from ctbn_au.trajectory import sample_trajectory


def chain():
    h = np.array([[[-1.0, 1.0], [2.0, -2.0]]])
    o = np.array([[[-0.5, 0.5], [3.0, -3.0]], [[-3.0, 3.0], [0.5, -0.5]]])
    return CtbnModel([NodeSpec("H", 2), NodeSpec("O", 2)], [[], ["H"]], [h, o])


def exit_rates(cims):
    return np.concatenate([-np.diagonal(np.asarray(q), axis1=1, axis2=2).ravel() for q in cims])


def main(seed):
    truth = chain()
    rng = np.random.default_rng(seed)
    data = [sample_trajectory(truth, 10.0, rng) for _ in range(800)]

    stats = collect_stats(truth, data[:5])
    print("five 10 s paths, node O: dwell time per (H context, O state)")
    print(np.round(stats.dwell("O"), 3))
    print("transition counts N[context, from, to]:")
    print(stats.counts("O"))

    print("\nexit rates, true:", exit_rates(truth.cims))
    for n in (25, 100, 400, 800):
        est = mle(collect_stats(truth, data[:n]))
        err = np.abs(exit_rates(est) / exit_rates(truth.cims) - 1)
        print(f"  n={n:4d} paths: {np.round(exit_rates(est), 3)}  median rel. error {np.median(err):.3f}")
    print("\nthe error shrinks like 1/sqrt(n); one draw per n is noisy, so the trend is not monotone.")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--seed", type=int, default=0)
    main(ap.parse_args().seed)
