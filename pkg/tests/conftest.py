"""Shared fixtures. Expensive objects are session-scoped and reused."""

import numpy as np
import pytest

from acglue import profile1d


@pytest.fixture(scope="session")
def cubic_profile():
    return profile1d.solve_heteroclinic(profile1d.cubic())


@pytest.fixture(scope="session")
def skew_spec():
    """A balanced but non-odd double well; exercises the generic paths."""

    def W(u):
        return 0.25 * (1.0 - u**2) ** 2 * (1.0 + 0.3 * u)

    def f(u):
        return (1.0 - u**2) * (u * (1.0 + 0.3 * u) - 0.075 * (1.0 - u**2))

    def f_prime(u):
        g = u + 0.3 * u**2 - 0.075 * (1.0 - u**2)
        gp = 1.0 + 0.75 * u
        return -2.0 * u * g + (1.0 - u**2) * gp

    def f_double_prime(u):
        g = u + 0.3 * u**2 - 0.075 * (1.0 - u**2)
        gp = 1.0 + 0.75 * u
        gpp = 0.75
        return -2.0 * g - 4.0 * u * gp + (1.0 - u**2) * gpp

    return profile1d.NonlinearitySpec(
        f=f, f_prime=f_prime, f_double_prime=f_double_prime, W=W, name="skew",
    )


@pytest.fixture(scope="session")
def skew_profile(skew_spec):
    return profile1d.solve_heteroclinic(skew_spec, T=20.0, n=2001)
