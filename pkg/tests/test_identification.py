import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from mnariv.errors import OutOfParameterSpace
from mnariv.identification import (EXAMPLE_LAW, EXAMPLE_NO_INTERACTION, BinaryFullLaw,
                                   construct_equivalent_law, observed_law,
                                   probe_no_interaction_identifiability, rho1_for,
                                   search_no_interaction_equivalents)


def test_example_equivalent_law():
    tilde = construct_equivalent_law(EXAMPLE_LAW, 0.3)
    assert rho1_for(EXAMPLE_LAW.xi, 0.3) == pytest.approx(-0.38, abs=5e-3)
    np.testing.assert_allclose(tilde.as_tuple(), (-0.3, 0.41, 0.91, 1.37, -0.28), atol=5e-3)
    assert observed_law(EXAMPLE_LAW).distance(observed_law(tilde)) < 1e-10


def test_observed_law_sums_to_one():
    obs = observed_law(EXAMPLE_LAW)
    assert obs.as_vector().sum() == pytest.approx(1.0, abs=1e-14)
    assert obs.as_vector().shape == (6,)


def test_zero_tilt_is_identity():
    assert construct_equivalent_law(EXAMPLE_LAW, 0.0) == EXAMPLE_LAW


def test_out_of_parameter_space():
    with pytest.raises(OutOfParameterSpace):
        construct_equivalent_law(BinaryFullLaw((3.0, 1.0, 2.0, 0.5), -0.05), 2.0)
    with pytest.raises(OutOfParameterSpace):
        BinaryFullLaw((0, 0, 0, 0), 0.1)


def test_probe_reports_positive_violations():
    report = probe_no_interaction_identifiability(EXAMPLE_NO_INTERACTION)
    assert report.all_violated
    assert all(e.violation > 1e-10 for e in report.entries if e.violation is not None)
    assert all(e.theta3_tilde is None or abs(e.theta3_tilde) > 1e-10 for e in report.entries)


def test_probe_rejects_interaction():
    with pytest.raises(ValueError):
        probe_no_interaction_identifiability(EXAMPLE_LAW)


def test_grid_search_finds_no_equivalent_pair():
    res = search_no_interaction_equivalents()
    assert res.n_laws > 40_000
    assert res.identified, res.close_pairs[:3]


theta_st = st.floats(-2, 2)


@settings(max_examples=200, deadline=None)
@given(theta_st, theta_st, theta_st, theta_st, st.floats(-2.5, -0.05), st.floats(0.1, 0.9),
       st.floats(-0.5, 0.5))
def test_equivalent_laws_share_observed_law(t0, t1, t2, t3, xi, pz, rho0):
    law = BinaryFullLaw((t0, t1, t2, t3), xi, pz)
    try:
        tilde = construct_equivalent_law(law, rho0)
    except OutOfParameterSpace:
        assume(False)
    assert observed_law(law).distance(observed_law(tilde)) < 1e-10


@settings(max_examples=100, deadline=None)
@given(theta_st, theta_st.filter(lambda v: abs(v) > 0.05), theta_st, st.floats(-2.5, -0.05),
       st.floats(-0.5, 0.5).filter(lambda v: abs(v) > 1e-3))
def test_constraint_gap_matches_induced_interaction(t0, t1, t2, xi, rho0):
    # the probe's constraint holds exactly when the tilted law has no interaction
    law = BinaryFullLaw((t0, t1, t2, 0.0), xi)
    try:
        tilde = construct_equivalent_law(law, rho0)
    except OutOfParameterSpace:
        assume(False)
    entry = probe_no_interaction_identifiability(law, (rho0,)).entries[0]
    assert (entry.violation < 1e-12) == (abs(tilde.theta[3]) < 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-2.5, -0.05), st.floats(-1, 1))
def test_tilted_outcome_law_is_a_distribution(xi, rho0):
    try:
        rho1 = rho1_for(xi, rho0)
    except OutOfParameterSpace:
        assume(False)
    # tilting P(Y=0) by exp(rho0) and P(Y=1) by exp(rho0 + rho1) keeps the total at one
    total = math.exp(rho0) * (1 - math.exp(xi)) + math.exp(rho0 + rho1) * math.exp(xi)
    assert total == pytest.approx(1.0, abs=1e-12)
