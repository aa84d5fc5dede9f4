"""
Posterior over a hidden node: exact forward-backward versus Gibbs.

O is observed for one second (0 -> 1 at 0.3 s, back to 0 at 0.7 s); H is
hidden.  The exact smoother works on the amalgamated generator restricted
to the evidence; the Gibbs sampler resamples H's whole path given its
Markov blanket.  With enough samples the two agree.

    python3 demos/03_inference.py
"""
import argparse

import numpy as np

from ctbn_au.inference import GibbsConfig, exact_posterior, gibbs_posterior
from ctbn_au.model import CtbnModel, NodeSpec
from ctbn_au.trajectory import Trajectory


def chain():
    h = np.array([[[-1.0, 1.0], [2.0, -2.0]]])
    o = np.array([[[-0.5, 0.5], [3.0, -3.0]], [[-3.0, 3.0], [0.5, -0.5]]])
    return CtbnModel([NodeSpec("H", 2), NodeSpec("O", 2)], [[], ["H"]], [h, o])


def main(seed, n_samples):
    m = chain()
    ev = Trajectory(1.0, {"O": ([0, 1, 0], [0.0, 0.3, 0.7])})
    times = np.linspace(0.05, 0.95, 10)

    exact = exact_posterior(m, ev, times)
    gibbs = gibbs_posterior(m, ev, GibbsConfig(n_samples, rng_seed=seed), times)
    print(f"log p(evidence) = {exact.log_evidence:.4f}")
    print("   t    P(H=1) exact   P(H=1) gibbs")
    for t, a, b in zip(times, exact.marginal("H")[:, 1], gibbs.marginal("H")[:, 1]):
        print(f"{t:5.2f}   {a:12.4f}   {b:12.4f}")
    gap = np.abs(exact.marginal("H") - gibbs.marginal("H")).mean()
    print(f"\nmean |exact - gibbs| = {gap:.4f} with {n_samples} samples")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-samples", type=int, default=5000)
    args = ap.parse_args()
    main(args.seed, args.n_samples)
