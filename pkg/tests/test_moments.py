import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mnariv.data import Dataset
from mnariv.estimators import fit_cc_outcome, fit_iv_density
from mnariv.model import expit
from mnariv.moments import (DEFAULT_CHOICE, EstimatorKind, InstrumentChoice, build_dr_system,
                            build_ipw_system, build_or_system, build_stacked_system, eval_G_DR)
from mnariv.simharness import OMEGA_TRUE, PHI_TRUE, ZETA_TRUE, population_cells, scenario_config

from conftest import make_config, random_binary_dataset


def population():
    """The generator's exact law as a weighted dataset (weights are probabilities)."""
    cells = population_cells()
    a = np.array([c for c, _ in cells], float)
    w = np.array([p for _, p in cells])
    x1, x2, z, y, r = a.T
    return Dataset(np.column_stack([x1, x2]), z, r, np.where(r == 1, y, np.nan), ("x1", "x2"), ("z",),
                   weights=w)


@pytest.fixture(scope="module")
def pop():
    return population()


def fitted(kind, pop):
    cfg = scenario_config(kind)
    cfg = cfg.with_params(xi=fit_iv_density(pop, cfg))
    return cfg.with_params(theta=fit_cc_outcome(pop, cfg))


def test_G_DR_hand_value():
    cfg = make_config(zeta=np.log(2.0), omega=(np.log(4.0) - np.log(2.0),))
    data = Dataset(np.empty((1, 0)), [0.0], [1], [1.0])
    assert eval_G_DR(cfg, data)[0] == pytest.approx(1.16667, abs=1e-5)


def test_G_DR_missing_row_is_prediction():
    cfg = make_config(zeta=0.4, theta=(0.3,))
    data = Dataset(np.empty((1, 0)), [1.0], [0], [np.nan])
    assert eval_G_DR(cfg, data)[0] == pytest.approx(expit(0.3 - 0.4))


def test_G_DR_unit_weight_is_u():
    cfg = make_config(zeta=0.0, omega=(40.0,), theta=(0.9,))
    data = Dataset(np.empty((1, 0)), [0.0], [1], [1.0])
    assert eval_G_DR(cfg, data)[0] == pytest.approx(1.0, abs=1e-12)


def test_custom_u_matches_default():
    cfg = make_config(zeta=0.7, omega=(0.5,), theta=(-0.2,))
    data = random_binary_dataset(np.random.default_rng(0), 30)
    a = eval_G_DR(cfg, data)
    b = eval_G_DR(cfg, data, u=lambda cols, y: y)
    np.testing.assert_allclose(a, b[:, 0], rtol=1e-14)


def test_iv_density_fit_recovers_truth(pop):
    from mnariv.simharness import XI_TRUE
    np.testing.assert_allclose(fit_iv_density(pop, scenario_config("iii")), XI_TRUE, atol=1e-8)


def test_ipw_rows_vanish_at_truth(pop):
    cfg = fitted("iii", pop)
    system = build_ipw_system(cfg)
    m = system.mean(system.pack({"omega": OMEGA_TRUE, "zeta": ZETA_TRUE}), pop)
    assert np.max(np.abs(m)) < 1e-12


def test_or_rows_vanish_at_truth(pop):
    system = build_or_system(fitted("iii", pop))
    assert abs(system.mean(np.array([ZETA_TRUE]), pop)[0]) < 1e-12


@pytest.mark.parametrize("kind", ["iii", "i", "ii"])
def test_dr_zeta_rows_vanish_at_truth(kind, pop):
    cfg = fitted(kind, pop)
    system = build_dr_system(cfg)
    n_om = len(cfg.baseline.design)
    # wrong propensity design: any omega works; otherwise use the true omega
    omega = np.full(n_om, 0.3) if kind == "i" else OMEGA_TRUE
    if kind == "ii":
        cfg = cfg.with_params(theta=np.array([0.2, -0.1]))
        system = build_dr_system(cfg)
    m = system.mean(system.pack({"omega": omega, "zeta": ZETA_TRUE}), pop)
    assert abs(m[system.labels.index("zeta:dr[0]")]) < 1e-12


def test_stacked_targets_give_true_mean(pop):
    cfg = fitted("iii", pop)
    G = eval_G_DR(cfg.with_params(omega=OMEGA_TRUE, zeta=ZETA_TRUE), pop)
    assert pop.average(G) == pytest.approx(PHI_TRUE, abs=1e-12)


def test_stacked_layouts():
    cfg = scenario_config("iii")
    ipw = build_stacked_system(EstimatorKind.IV_IPW, cfg)
    dr = build_stacked_system(EstimatorKind.IV_DR, cfg)
    assert ipw.exactly_identified and dr.exactly_identified
    assert list(ipw.layout) == ["xi", "omega", "zeta", "phi"]
    assert list(dr.layout) == ["xi", "omega", "zeta", "theta", "phi"]
    assert (ipw.dim_params, build_stacked_system("OR", cfg).dim_params, dr.dim_params) == (10, 14, 18)


def test_extra_instrument_function_overidentifies():
    cfg = scenario_config("iii")
    choice = InstrumentChoice(h2=lambda c: np.column_stack([c["z"], c["z"] * c["x1"]]))
    assert not build_stacked_system("IPW", cfg, choice).exactly_identified


def test_all_observed_or_rows_reduce_to_exclusion(pop):
    # with every outcome observed the OR row is {z - E[z|x]} y, mean zero when Z is independent of Y given X
    full = pop.subset(pop.r == 1)
    cfg = fitted("iii", pop)
    rows = build_or_system(cfg).eval_rows(np.array([5.0]), full)
    zc = full.z[:, 0] - expit(full.design_matrix(cfg.iv.designs[0]) @ cfg.iv.xi)
    np.testing.assert_allclose(rows[:, 0], zc * full.y_filled)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_G_DR_row_identity(zeta, omega, theta, seed):
    data = random_binary_dataset(np.random.default_rng(seed), 20)
    cfg = make_config(zeta=zeta, omega=(omega,), theta=(theta,))
    G = eval_G_DR(cfg, data)
    m = expit(theta - zeta)
    pi = expit(omega + zeta * data.y_filled)
    expected = np.where(data.r == 1, (data.y_filled - m) / pi + m, m)
    np.testing.assert_allclose(G, expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_compressed_moments_match(seed):
    data = random_binary_dataset(np.random.default_rng(seed), 60)
    cfg = make_config(zeta=0.3, omega=(0.2, 0.1), theta=(0.0, 0.5), xi=(0.1, -0.3),
                      baseline="1, z", outcome="1, x1", iv="1, x1")
    system = build_stacked_system("DR", cfg)
    p = np.linspace(-0.3, 0.4, system.dim_params)
    np.testing.assert_allclose(system.mean(p, data.compressed()), system.mean(p, data), atol=1e-13)
