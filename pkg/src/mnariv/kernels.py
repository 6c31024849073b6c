"""Backend selection for the per-row kernels.

The compiled extension is used when it imports; setting the environment
variable ``MNARIV_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on build
    _ckernels = None
else:
    BACKENDS["compiled"] = _ckernels

if _ckernels is not None and os.environ.get("MNARIV_PURE_PYTHON", "") != "1":
    BACKEND = "compiled"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]


def use_backend(name):
    """Switch the active backend ("compiled" or "python"); returns the previous name."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}")
    previous, BACKEND, _impl = BACKEND, name, BACKENDS[name]
    return previous


def expit(t):
    return _impl.expit(t)


def propensity_weights(r, lin, yfill, zeta):
    return _impl.propensity_weights(r, lin, yfill, float(zeta))


def dr_terms(r, yfill, lin_base, lin_outcome, zeta):
    return _impl.dr_terms(r, yfill, lin_base, lin_outcome, float(zeta))


def efficiency_cells(q1, lam0, lam1, th0, th1, zeta):
    return _impl.efficiency_cells(q1, lam0, lam1, th0, th1, float(zeta))
