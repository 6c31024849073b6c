"""Root finding and GMM minimisation for averaged moment systems.

All multivariate solves go through one damped Newton / Gauss-Newton loop
with a central-difference Jacobian, Armijo backtracking and seeded random
restarts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import (MnarIvError, NoConvergence, NonFiniteEvaluation, NoSignChange,
                     PositivityViolation, SingularJacobian)

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
COND_LIMIT = 1e12


@dataclass(frozen=True)
class SolveOptions:
    tol_residual: float = 1e-9
    max_iter: int = 200
    fd_step_scale: float = EPS ** (1.0 / 3.0)
    bracket: tuple[float, float] = (-10.0, 10.0)
    retries: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if not self.bracket[0] < self.bracket[1]:
            raise ValueError("bracket must satisfy lo < hi")


@dataclass
class SolveDiagnostics:
    converged: bool
    iterations: int
    final_residual_norm: float
    restarts_used: int = 0
    method: str = "newton"
    flags: list[str] = field(default_factory=list)
    weight: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_residual_norm": float(self.final_residual_norm),
            "restarts_used": int(self.restarts_used),
            "method": self.method,
            "flags": list(self.flags),
        }


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x, step_scale: float | None = None) -> np.ndarray:
    """Central-difference Jacobian with step ``step_scale * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    h_scale = SolveOptions.fd_step_scale if step_scale is None else step_scale
    cols = []
    for i in range(x.size):
        h = h_scale * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteEvaluation(f"non-finite evaluation while differencing coordinate {i}")
        cols.append((fp - fm) / (xp[i] - xm[i]))
    return np.column_stack(cols) if cols else np.empty((0, 0))


def _safe_eval(F, x):
    """F(x), or None when the point is outside the usable region."""
    try:
        val = np.asarray(F(x), dtype=float)
    except (PositivityViolation, NonFiniteEvaluation, FloatingPointError, OverflowError):
        return None
    if not np.all(np.isfinite(val)):
        return None
    return val


def _newton_run(F, x0, opts, objective=None, direction=None):
    """One damped run.  Returns (x, value, iterations, converged)."""
    x = np.array(x0, dtype=float)
    fx = _safe_eval(F, x)
    if fx is None:
        return x, None, 0, False
    it = 0
    while it < opts.max_iter:
        obj, done = objective(x, fx)
        if done:
            return x, fx, it, True
        step = direction(x, fx)
        if step is None:
            return x, fx, it, True
        # directional derivative of the objective; -2 obj for a Newton step on 0.5 |F|^2
        step, slope = step if isinstance(step, tuple) else (step, -2.0 * obj)
        t = 1.0
        accepted = False
        while t > 1e-12:
            xn = x + t * step
            fn = _safe_eval(F, xn)
            if fn is not None:
                obj_n, done_n = objective(xn, fn)
                if done_n or obj_n <= obj + 1e-4 * t * slope:
                    accepted = True
                    break
            t *= 0.5
        it += 1
        if not accepted:
            return x, fx, it, False
        x, fx = xn, fn
    obj, done = objective(x, fx)
    return x, fx, it, done


def newton_root(F: Callable[[np.ndarray], np.ndarray], x0, opts: SolveOptions | None = None,
                jac: Callable[[np.ndarray], np.ndarray] | None = None):
    """Damped Newton on ``F(x) = 0`` (square systems).

    ``jac`` supplies an analytic Jacobian; finite differences otherwise.
    Returns ``(x, SolveDiagnostics)``; raises NoConvergence after all
    restarts are exhausted.
    """
    opts = opts or SolveOptions()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rng = np.random.default_rng(opts.seed)

    def objective(x, fx):
        return 0.5 * float(fx @ fx), float(np.max(np.abs(fx), initial=0.0)) <= opts.tol_residual

    def direction(x, fx):
        J = fd_jacobian(F, x, opts.fd_step_scale) if jac is None else np.asarray(jac(x), float)
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
            raise SingularJacobian("Jacobian is numerically singular")
        return np.linalg.solve(J, -fx)

    best_x, best_res = x0, np.inf
    total_it = 0
    start = x0
    for attempt in range(opts.retries + 1):
        try:
            x, fx, it, ok = _newton_run(F, start, opts, objective, direction)
        except (SingularJacobian, NonFiniteEvaluation, PositivityViolation, np.linalg.LinAlgError) as exc:
            log.debug("newton attempt %d failed: %s", attempt, exc)
            x, fx, it, ok = start, None, 0, False
        total_it += it
        res = np.inf if fx is None else float(np.max(np.abs(fx), initial=0.0))
        if res < best_res:
            best_x, best_res = x, res
        if ok:
            return x, SolveDiagnostics(True, total_it, res, attempt)
        start = x0 + rng.uniform(-1.0, 1.0, size=x0.shape)
    diag = SolveDiagnostics(False, total_it, best_res, opts.retries)
    raise NoConvergence(f"no root found after {opts.retries} restarts (best residual {best_res:.3g})",
                        best=best_x, residual=best_res, diagnostics=diag)


def solve_root(system, data, x0=None, opts: SolveOptions | None = None):
    """Solve the averaged moment equations of an exactly identified system."""
    if system.dim_moments != system.dim_params:
        raise ValueError(f"{system.name}: {system.dim_moments} moments for "
                         f"{system.dim_params} parameters; use gmm_two_step")
    x0 = np.zeros(system.dim_params) if x0 is None else x0
    analytic = getattr(system, "mean_jacobian", None)
    jac = None if analytic is None else (lambda p: analytic(p, data))
    return newton_root(lambda p: system.mean(p, data), x0, opts, jac)


def solve_scalar(f: Callable[[float], float], opts: SolveOptions | None = None) -> float:
    """Root of a scalar function by bracketing then Brent's method.

    The starting bracket is scanned on a 64-interval grid for a sign change
    and widened geometrically up to ten times its original width.
    """
    opts = opts or SolveOptions()
    lo, hi = opts.bracket
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def g(t):
        v = float(f(t))
        if not np.isfinite(v):
            raise NonFiniteEvaluation(f"non-finite value at {t}")
        return v

    width = half
    while width <= 10.0 * half + 1e-12:
        grid = np.linspace(center - width, center + width, 65)
        vals = np.array([g(t) for t in grid])
        exact = np.flatnonzero(vals == 0.0)
        if exact.size:
            return float(grid[exact[0]])
        change = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
        if change.size:
            k = change[0]
            return float(optimize.brentq(g, grid[k], grid[k + 1], xtol=1e-14, rtol=4 * EPS, maxiter=500))
        width *= 2.0
    raise NoSignChange(f"no sign change on [{center - width / 2:.3g}, {center + width / 2:.3g}]")


def _gauss_newton(system, data, x0, weight, opts):
    """Minimise mbar' W mbar; returns (x, diagnostics)."""
    W = weight
    rng = np.random.default_rng(opts.seed)
    M = lambda p: system.mean(p, data)

    def objective(x, m):
        return float(m @ W @ m), float(np.max(np.abs(m), initial=0.0)) <= opts.tol_residual

    def gradient(x, m):
        J = fd_jacobian(M, x, opts.fd_step_scale)
        return J, J.T @ W @ m

    def direction(x, m):
        J, g = gradient(x, m)
        if float(np.max(np.abs(g), initial=0.0)) <= opts.tol_residual:
            return None
        H = J.T @ W @ J
        lam = 0.0
        for _ in range(20):
            try:
                step = np.linalg.solve(H + lam * np.eye(H.shape[0]), -g)
                if np.all(np.isfinite(step)):
                    # stop once the predicted decrease is lost in rounding
                    if -(g @ step) <= 1e-12 * float(m @ W @ m):
                        return None
                    return step, 2.0 * float(g @ step)
            except np.linalg.LinAlgError:
                pass
            lam = max(1e-10, 10 * lam) * max(1.0, np.trace(H) / H.shape[0])
        raise SingularJacobian("Gauss-Newton system is singular")

    best, best_q = np.asarray(x0, float), np.inf
    start = np.asarray(x0, dtype=float)
    total = 0
    for attempt in range(opts.retries + 1):
        try:
            x, m, it, ok = _newton_run(M, start, opts, objective, direction)
        except (SingularJacobian, NonFiniteEvaluation, PositivityViolation, np.linalg.LinAlgError):
            x, m, it, ok = start, None, 0, False
        total += it
        flags = []
        if not ok and m is not None:
            # a stalled line search at the minimiser of an over-identified objective
            _, g = gradient(x, m)
            if float(np.max(np.abs(g))) <= 1e3 * opts.tol_residual:
                ok, flags = True, ["gradient_tolerance_relaxed"]
        q = np.inf if m is None else float(m @ W @ m)
        if q < best_q:
            best, best_q = x, q
        if ok:
            # over-identified objectives stop on the gradient, so report that
            res = float(np.max(np.abs(m), initial=0.0))
            if res > opts.tol_residual:
                res = float(np.max(np.abs(gradient(x, m)[1]), initial=0.0))
            return x, SolveDiagnostics(True, total, res, attempt, method="gauss-newton", flags=flags)
        start = np.asarray(x0, float) + rng.uniform(-1.0, 1.0, size=start.shape)
    diag = SolveDiagnostics(False, total, best_q, opts.retries, method="gauss-newton")
    raise NoConvergence("GMM minimisation did not converge", best=best, residual=best_q, diagnostics=diag)


def gmm_minimize(system, data, x0=None, weight=None, opts: SolveOptions | None = None):
    """One-step GMM with a fixed weight (identity by default)."""
    opts = opts or SolveOptions()
    x0 = np.zeros(system.dim_params) if x0 is None else np.asarray(x0, float)
    W = np.eye(system.dim_moments) if weight is None else np.asarray(weight, float)
    x, diag = _gauss_newton(system, data, x0, W, opts)
    diag.weight = W
    return x, diag


def gmm_two_step(system, data, x0=None, opts: SolveOptions | None = None):
    """Two-step efficient GMM.

    Step one uses the identity weight; step two re-minimises with the inverse
    of the centred moment covariance at the step-one estimate.  When that
    covariance has condition number above 1e12 the identity weight is kept and
    the diagnostics carry the ``ill_conditioned_weight`` flag.
    """
    opts = opts or SolveOptions()
    if system.dim_moments < system.dim_params:
        raise ValueError("under-identified system")
    x1, diag1 = gmm_minimize(system, data, x0, None, opts)
    if system.dim_moments == system.dim_params:
        diag1.method = "gmm(exact)"
        return x1, diag1
    rows = system.eval_rows(x1, data)
    S = np.cov(rows, rowvar=False, bias=True)
    S = np.atleast_2d(S)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > COND_LIMIT:
        diag1.flags.append("ill_conditioned_weight")
        diag1.method = "gmm(identity)"
        return x1, diag1
    W2 = np.linalg.inv(S)
    W2 = 0.5 * (W2 + W2.T)
    x2, diag2 = gmm_minimize(system, data, x1, W2, opts)
    diag2.iterations += diag1.iterations
    diag2.method = "gmm(two-step)"
    return x2, diag2


__all__ = ["SolveOptions", "SolveDiagnostics", "fd_jacobian", "newton_root", "solve_root",
           "solve_scalar", "gmm_minimize", "gmm_two_step", "MnarIvError"]
