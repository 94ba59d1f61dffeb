import math

import pytest

import nonlocal_multisol as nm


@pytest.fixture(scope="session")
def grid512():
    return nm.build_grid(nm.DomainSpec("interval", (0.0, 1.0), 512))


@pytest.fixture(scope="session")
def eig512(grid512):
    return nm.eigen_data(grid512, 1.0)


@pytest.fixture(scope="session")
def grid1024():
    return nm.build_grid(nm.DomainSpec("interval", (0.0, 1.0), 1024))


@pytest.fixture(scope="session")
def eig1024(grid1024):
    return nm.eigen_data(grid1024, 1.0)


@pytest.fixture(scope="session")
def family_b1(grid512, eig512):
    """Power-law family, one working interval, p = 1, on the unit interval."""
    return nm.make_family_b(1, 1.0, eig512.lambda1, eig512.C1,
                            grid512.measure, eig512.int_e1_p)


@pytest.fixture(scope="session")
def family_b2(grid512, eig512):
    """Power-law family with two working intervals (U = pi)."""
    return nm.make_family_b(2, 1.0, eig512.lambda1, eig512.C1,
                            grid512.measure, eig512.int_e1_p, U=math.pi)


@pytest.fixture(scope="session")
def family_c1(grid512, eig512):
    """Rational family, one working interval, p = 1."""
    return nm.make_family_c(1, 1.0, eig512.lambda1, eig512.C1,
                            grid512.measure, eig512.int_e1_p)


@pytest.fixture(scope="session")
def geometry_kw(grid512, eig512):
    return dict(lambda1=eig512.lambda1, C1=eig512.C1, measure=grid512.measure,
                int_e1_p=eig512.int_e1_p, p=1.0)
