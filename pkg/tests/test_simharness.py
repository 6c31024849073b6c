import numpy as np
import pytest

from mnariv.simharness import (PHI_TRUE, ScenarioKind, ScenarioSpec, generate_dataset,
                               population_cells, run_study)


def test_true_mean():
    assert PHI_TRUE == pytest.approx(0.769, abs=5e-4)
    assert sum(p for _, p in population_cells()) == pytest.approx(1.0, abs=1e-14)


def test_generator_is_deterministic():
    a, b = generate_dataset(500, 7), generate_dataset(500, 7)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.r, b.r)
    assert not np.array_equal(a.r, generate_dataset(500, 8).r)


def test_generator_matches_population():
    d = generate_dataset(200_000, 1)
    assert d.average(d.r) == pytest.approx(sum(p for c, p in population_cells() if c[4] == 1), abs=5e-3)


def test_scenario_aliases():
    assert ScenarioKind.parse("iii") is ScenarioKind.CORRECT_BOTH
    assert ScenarioKind.parse("i") is ScenarioKind.MISSPEC_PROPENSITY
    with pytest.raises(ValueError):
        ScenarioKind.parse("iv")
    with pytest.raises(ValueError):
        ScenarioSpec("iii", 50, 10)


def test_study_reproducible_and_parallel_invariant():
    spec = ScenarioSpec("iii", 500, 6, base_seed=4)
    a = run_study(spec, ("IPW", "DR"))
    b = run_study(spec, ("IPW", "DR"), workers=2)
    for e in ("IV_IPW", "IV_DR"):
        np.testing.assert_array_equal(a.draws[e]["phi"], b.draws[e]["phi"])
    s = a.summary("DR", "zeta")
    assert s.used + s.failed == 6
    assert set(a.to_dict()) >= {"scenario", "truth", "summaries", "failures", "warnings"}
