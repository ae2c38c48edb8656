import math

import pytest
from hypothesis import given, strategies as st

from corrnoise.errors import ParameterError
from corrnoise.privacy import (
    PrivacyTarget,
    amplification_reduction,
    calibrate_nu,
    gdp_to_zcdp,
    mu_from_nu,
)


def test_zcdp_anchor():
    assert gdp_to_zcdp(1.0) == 0.5


def test_replace_one_doubles():
    z = calibrate_nu(1.7, PrivacyTarget(0.8))
    r = calibrate_nu(1.7, PrivacyTarget(0.8, "replace_one"))
    assert r == 2 * z


def test_amplification_anchor():
    assert tuple(amplification_reduction(12, 3, 10, 300, 2, 2)) == (4, 0.1, 1)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.sampled_from(["zero_out", "replace_one"]))
def test_calibration_round_trip(sens, mu, adjacency):
    nu = calibrate_nu(sens, PrivacyTarget(mu, adjacency))
    assert math.isclose(mu_from_nu(nu, sens, adjacency), mu, rel_tol=1e-12)


@pytest.mark.parametrize("mu", [0.0, -1.0, math.inf, math.nan])
def test_invalid_mu(mu):
    with pytest.raises(ParameterError):
        PrivacyTarget(mu)


def test_amplification_validation():
    with pytest.raises(ParameterError):
        amplification_reduction(10, 3, 1, 100, 1, 1)
    with pytest.raises(ParameterError):
        amplification_reduction(12, 3, 200, 300, 1, 1)
