"""Posterior concentration on a KNR instance with a 16-model class.

    python scripts/knr_smoke.py [--seeds 5] [--T 3000]
"""
import argparse

import numpy as np

from mops import analysis as an
from mops.driver import Hyperparams, run_mops
from mops.generators import PolicyGenerator
from mops.instances import make_knr


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--T", type=int, default=3000)
    ap.add_argument("--generator", default="q_type", choices=["q_type", "v_uniform", "v_double"])
    args = ap.parse_args()
    inst = make_knr(state_dim=2, feature_dim=3, class_size=16, seed=7)
    mc = inst.model_class()
    masses = []
    for s in range(args.seeds):
        r = run_mops(inst.env, mc, PolicyGenerator(args.generator), Hyperparams(), args.T,
                     np.random.default_rng([12, s]), keep_trace=False)
        masses.append(r.posterior.weights[mc.true_index])
        print(f"seed {s}: mass on W* = {masses[-1]:.4f}")
    ceil = an.knr_ceiling(inst.env, mc, an.standard_grid(len(mc)), 0.0)
    print(f"mean mass {np.mean(masses):.4f}; kappa = sigma = {ceil.kappa}; "
          f"d_eff = {ceil.d_eff:.3f}; ceiling = {ceil.value:.3f}")


if __name__ == "__main__":
    main()
