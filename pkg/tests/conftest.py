"""Shared fixtures: two basis sizes, standard quadratures, and cached
problem instances so the expensive operator builds run once per session."""

import numpy as np
import pytest

from tiltrec.basis import build_basis_spec, build_quadrature, eval_tilt_matrix
from tiltrec.moments import population_features
from tiltrec.sim import (build_line_grid, bump_distribution, generate_batch,
                         random_phantom)

DEG = np.pi / 180.0


@pytest.fixture(scope="session")
def small_spec():
    return build_basis_spec(0.3, 8.0)


@pytest.fixture(scope="session")
def med_spec():
    return build_basis_spec(0.3, 16.0)


@pytest.fixture(scope="session")
def quad32():
    return build_quadrature(0.3, 32)


@pytest.fixture(scope="session")
def quad64():
    return build_quadrature(0.3, 64)


@pytest.fixture(scope="session")
def bump12():
    return bump_distribution(12, 1.1, 2.5)


@pytest.fixture(scope="session")
def bump24():
    return bump_distribution(24, 1.1, 2.5)


@pytest.fixture(scope="session")
def bump30():
    # 30 angles clears the aliasing threshold 2*k_max = 14 of the R=8 basis
    return bump_distribution(30, 1.1, 2.5)


@pytest.fixture(scope="session")
def small_phantom(small_spec):
    return random_phantom(small_spec, 1.0, seed=11)


@pytest.fixture(scope="session")
def med_phantom(med_spec):
    return random_phantom(med_spec, 1.0, seed=11)


@pytest.fixture(scope="session")
def small_problem(small_spec, small_phantom, bump30, quad32):
    """Analytic features for a 16-pixel-wide instance: K=2 tilts at 3.8 deg."""
    K, alpha = 2, 3.8 * DEG
    psi = eval_tilt_matrix(small_spec, quad32, K, alpha)
    feats = population_features(small_phantom, bump30, psi, quad32, K, alpha)
    return {"spec": small_spec, "a": small_phantom, "p": bump30,
            "quad": quad32, "K": K, "alpha": alpha, "psi": psi,
            "features": feats}


@pytest.fixture(scope="session")
def small_batch(small_phantom, bump12, quad32):
    grid = build_line_grid(16)
    return generate_batch(small_phantom, bump12, 400, 2, 3.8 * DEG, 0.5,
                          grid, quad32, seed=7), grid
