import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mnariv import _kernels_py, kernels

COMPILED = kernels.BACKENDS.get("compiled")
needs_compiled = pytest.mark.skipif(COMPILED is None, reason="compiled extension not built")


def test_backend_choice_reported():
    assert kernels.BACKEND in kernels.BACKENDS


def test_use_backend_switches_and_restores():
    prev = kernels.use_backend("python")
    try:
        assert kernels.BACKEND == "python"
    finally:
        kernels.use_backend(prev)
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_expit_hand_values():
    assert _kernels_py.expit(np.array([3.6]))[0] == pytest.approx(0.973404, abs=1e-6)


def _case(rng, n):
    r = (rng.random(n) < 0.7).astype(float)
    y = np.where(r == 1, (rng.random(n) < 0.5).astype(float), 0.0)
    return r, y, rng.normal(1, 1, n), rng.normal(0, 1, n), rng.uniform(0.1, 0.9, n), rng.normal(size=(2, n))


@needs_compiled
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    r, y, lin, lin2, q1, th = _case(rng, 257)
    for name, args in [("expit", (lin,)),
                       ("propensity_weights", (r, lin, y, 0.7)),
                       ("dr_terms", (r, y, lin, lin2, -0.4)),
                       ("efficiency_cells", (q1, lin, lin2, th[0], th[1], 1.3))]:
        a = getattr(COMPILED, name)(*args)
        b = getattr(_kernels_py, name)(*args)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-14)


@needs_compiled
@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 40), elements=st.floats(-700, 700)))
def test_expit_agrees_over_range(t):
    np.testing.assert_allclose(COMPILED.expit(t), _kernels_py.expit(t), rtol=1e-12, atol=1e-300)


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 40), elements=st.floats(-700, 700)))
def test_expit_in_closed_unit_interval(t):
    p = _kernels_py.expit(t)
    assert np.all((p >= 0) & (p <= 1))
