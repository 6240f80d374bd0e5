"""Recover object and view distribution from exact (population) moments.

With noiseless analytic features the data-fit objective can be driven to
zero, and the recovered pair matches the truth up to the one fundamental
ambiguity of the problem: a global in-plane rotation.  Because the rotation
is continuous while the view distribution lives on a grid, the solver's
answer usually sits slightly off-grid; the alignment metrics below make the
residual ambiguity visible and then remove it.
"""

import math
import time

import numpy as np

from tiltrec.admm import AdmmConfig, run_admm
from tiltrec.basis import build_basis_spec, build_quadrature, eval_tilt_matrix
from tiltrec.metrics import joint_alignment, relative_error
from tiltrec.moments import population_features
from tiltrec.sim import bump_distribution, random_phantom

DEG = math.pi / 180.0


def main():
    spec = build_basis_spec(0.3, 8.0)
    quad = build_quadrature(spec.c, 32)
    n_theta = 24
    p = bump_distribution(n_theta, loc=1.1, kappa=2.5)
    truth = random_phantom(spec, decay=1.0, seed=11)
    K, alpha = 6, 7.5 * DEG
    psi = eval_tilt_matrix(spec, quad, K, alpha)
    feats = population_features(truth, p, psi, quad, K, alpha)

    print(f"object: {spec.n_a} coefficients, views: {n_theta} angles, "
          f"features from {2 * K + 1} tilts {alpha / DEG:.1f} deg apart")
    print("solving from random starts (objective is nonconvex; restarts "
          "are cheap insurance):")
    best = None
    for seed in range(3):
        t0 = time.perf_counter()
        res = run_admm(feats, AdmmConfig(lam2=5.0, max_iter=4000, seed=seed),
                       spec, n_theta)
        obj = res.history["objective"][-1]
        print(f"  seed {seed}: final objective {obj:.3e} "
              f"({res.n_iter} iterations, {time.perf_counter() - t0:.1f}s)")
        if best is None or obj < best[1]:
            best = (res, obj)
    res, obj = best

    checkpoints = [0, 10, 100, 1000, len(res.history["objective"]) - 1]
    print("\nobjective decay for the best start:")
    for i in checkpoints:
        print(f"  iter {res.history['iter'][i]:5d}: "
              f"{res.history['objective'][i]:.3e}")

    re_grid, gamma = relative_error(truth, res.a, 2400)
    re_j, tv_j, shift = joint_alignment(truth, res.a, p, res.p)
    print(f"\nalignment of the best estimate:")
    print(f"  continuous rotation search: RE {re_grid:.2e} at "
          f"{gamma / DEG:.2f} deg")
    print(f"  nearest grid angle is {360 / n_theta * round(gamma / (2 * math.pi) * n_theta):.1f} deg "
          f"(grid step {360 / n_theta:.1f} deg)")
    print(f"  joint grid alignment: RE {re_j:.3f}, TV {tv_j:.3f}, "
          f"shift {shift}")
    print("the joint numbers floor at the off-grid part of the rotation; "
          "the continuous search confirms the object itself is recovered")


if __name__ == "__main__":
    main()
