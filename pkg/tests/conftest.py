"""Shared model fixtures for the test suite."""

import pytest

from polysls import builtin, scalar_polynomial


@pytest.fixture(scope="session")
def scalar_linear():
    return scalar_polynomial("scalar_linear", [0.5])


@pytest.fixture(scope="session")
def scalar_quadratic():
    return builtin("scalar_quadratic")


@pytest.fixture(scope="session")
def scalar_cubic():
    return scalar_polynomial("scalar_cubic", [0.5, -0.4, 0.3])


@pytest.fixture(scope="session")
def cylinder_wake():
    return builtin("cylinder_wake")


@pytest.fixture(scope="session")
def model_matrix(scalar_linear, scalar_quadratic, scalar_cubic, cylinder_wake):
    return (scalar_linear, scalar_quadratic, scalar_cubic, cylinder_wake)
