"""Grid estimates of the decoupling coefficient next to their analytic ceilings.

    python scripts/decoupling_table.py
"""
import numpy as np

from mops import analysis as an
from mops.generators import PolicyGenerator
from mops.instances import reference_instance


def main():
    inst = reference_instance()
    mc = inst.model_class()
    tb = an.ClassTables(inst.env, mc)
    grid = an.standard_grid(len(mc))
    A = inst.env.num_actions
    gens = [PolicyGenerator("v_uniform"), PolicyGenerator("q_type"),
            PolicyGenerator("v_design", lambda c, l, s: np.eye(A))]
    print("generator   level  eps     grid_estimate  ceiling")
    for gen in gens:
        for h in range(inst.env.horizon):
            for eps in (0.0, 0.01, 0.05):
                rep = an.empirical_decoupling(inst.env, mc, gen, h, 0.5, eps, grid, tb)
                ceil = an.decoupling_ceiling(tb, gen, h, eps, grid)
                print(f"{gen.kind.value:<11} {h + 1:>5}  {eps:<6}  {rep.coefficient:>13.4f}  {ceil.value:>7.3f}")


if __name__ == "__main__":
    main()
