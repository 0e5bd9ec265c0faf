"""Shared fixtures: cached geometry bundles and tolerance config.

Fixture bundles are expensive to sample at fine resolution, so every
bundle is built once per session and shared read-only.  Tests must not
mutate the returned objects; anything that needs a writable field makes
its own copy.
"""

import numpy as np
import pytest

from lowreg import generate_fixture

_CACHE = {}


def bundle(name, **params):
    key = (name, tuple(sorted(params.items())))
    if key not in _CACHE:
        _CACHE[key] = generate_fixture(name, **params)
    return _CACHE[key]


@pytest.fixture(scope="session")
def euclid_coarse():
    return bundle("euclid", h=0.05)


@pytest.fixture(scope="session")
def euclid_fine():
    return bundle("euclid", h=0.01)


@pytest.fixture(scope="session")
def polar_mid():
    return bundle("polar", h=0.01)


@pytest.fixture(scope="session")
def polar_fine():
    return bundle("polar", h=0.005)


@pytest.fixture(scope="session")
def sphere_mid():
    return bundle("sphere", h=0.01)


@pytest.fixture(scope="session")
def sphere_fine():
    return bundle("sphere", h=0.005)


@pytest.fixture(scope="session")
def hyperbolic_mid():
    return bundle("hyperbolic", h=0.01)


@pytest.fixture(scope="session")
def hyperbolic_fine():
    return bundle("hyperbolic", h=0.005)


@pytest.fixture(scope="session")
def cusp_mid():
    return bundle("example46", h=0.01)


@pytest.fixture(scope="session")
def minkowski_mid():
    return bundle("minkowski-disguise", h=0.01)


@pytest.fixture(scope="session")
def product2d_mid():
    return bundle("product-disguise", h=0.02, dim=2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260819)
