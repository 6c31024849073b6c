"""Locally efficient one-step estimators for binary Z and Y.

All conditional expectations given X are exact sums over the eight
``(z, y, r)`` cells under the fitted intersection model (propensity and
outcome models both taken as correct).  The cell index is ``z*4 + y*2 + r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import Dataset, Observation
from .errors import SchemaError, SingularUpdate
from .model import ModelConfig
from .moments import DEFAULT_CHOICE, EstimatorKind, eval_G_DR
from .solver import SolveDiagnostics, SolveOptions

N_CELLS = 8
# outer step for differentiating the efficient score, which itself holds an
# inner central difference at the solver's step
OUTER_STEP = 1e-4
# rows per covariate pattern needed before E[. | X] is taken empirically
MIN_PATTERN_ROWS = 30


@dataclass(frozen=True)
class CellTables:
    """Per-row tables over the eight cells at one value of zeta."""

    W: np.ndarray
    P: np.ndarray
    G: np.ndarray
    zeta: float


@dataclass
class IntersectionModelFit:
    """Fitted nuisance models plus the data they are evaluated on.

    ``conditional`` selects how E[. | X] is taken: ``"model"`` sums over the
    cells with model probabilities; ``"empirical"`` averages the observed
    values within each distinct covariate pattern; ``"auto"`` picks
    ``"empirical"`` when every covariate pattern has at least
    ``MIN_PATTERN_ROWS`` rows and ``"model"`` otherwise.
    """

    config: ModelConfig
    data: Dataset
    conditional: str = "auto"
    step_scale: float = SolveOptions.fd_step_scale
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        iv = self.config.iv
        if len(iv.instruments) != 1:
            raise SchemaError("the efficient estimator needs exactly one binary instrument")
        if self.conditional not in ("model", "empirical", "auto"):
            raise ValueError("conditional must be 'model', 'empirical' or 'auto'")
        z = self.data.z[:, 0]
        if not np.all((z == 0) | (z == 1)):
            raise SchemaError("the efficient estimator needs a binary instrument")
        y = self.data.y_filled
        if not np.all((y == 0) | (y == 1)):
            raise SchemaError("the efficient estimator needs a binary outcome")
        d = self.data
        self.observed_cell = (z * 4 + y * 2 + d.r).astype(np.intp)
        self.z_name = iv.instruments[0]
        cfg = self.config
        zero, one = ((self.z_name, 0.0),), ((self.z_name, 1.0),)
        self.q1 = kernels.expit(d.design_matrix(iv.designs[0]) @ iv.xi)
        self.lam = tuple(d.design_matrix(cfg.baseline.design, o) @ cfg.baseline.omega for o in (zero, one))
        self.th = tuple(d.design_matrix(cfg.outcome.design, o) @ cfg.outcome.theta for o in (zero, one))
        if self.conditional != "model":
            _, inv = np.unique(d.x, axis=0, return_inverse=True) if d.x.shape[1] else (None, np.zeros(d.n, int))
            self._groups = inv.ravel()
            w = np.ones(d.n) if d.weights is None else d.weights
            self._group_w = np.bincount(self._groups, weights=w)
            self._row_w = w
            if self.conditional == "auto":
                self.conditional = "empirical" if self._group_w.min() >= MIN_PATTERN_ROWS else "model"

    @classmethod
    def from_config(cls, config: ModelConfig, data: Dataset, **kwargs) -> "IntersectionModelFit":
        return cls(config, data, **kwargs)

    def at(self, zeta: float) -> "IntersectionModelFit":
        """Same fit with the selection-bias parameter replaced."""
        return IntersectionModelFit(self.config.with_params(zeta=zeta), self.data, self.conditional,
                                    self.step_scale)

    def cells(self, zeta: float | None = None) -> CellTables:
        zeta = self.config.zeta if zeta is None else float(zeta)
        key = zeta
        if key not in self._cache:
            W, P, G = kernels.efficiency_cells(self.q1, self.lam[0], self.lam[1], self.th[0], self.th[1], zeta)
            self._cache[key] = CellTables(W, P, G, zeta)
        return self._cache[key]

    def observed(self, table: np.ndarray) -> np.ndarray:
        return table[np.arange(table.shape[0]), self.observed_cell]

    def expect(self, values: np.ndarray, probs: np.ndarray) -> np.ndarray:
        """E[v | X] per row for a cell table ``values`` of shape (n, 8)."""
        if self.conditional == "model":
            return np.einsum("ij,ij->i", probs, values)
        v = self.observed(values) * self._row_w
        sums = np.bincount(self._groups, weights=v, minlength=self._group_w.size)
        return (sums / self._group_w)[self._groups]

    # derived laws on the support, exposed for inspection and tests
    def tables(self, zeta: float | None = None) -> dict:
        """E(Y|X), E(Z|X), E(Y|R=0,X,Z=z), pi(x,y,z) and the cell law per row."""
        zeta = self.config.zeta if zeta is None else float(zeta)
        c = self.cells(zeta)
        ey = c.P[:, [2, 3, 6, 7]].sum(axis=1)
        return {
            "E_Y_given_X": ey,
            "E_Z_given_X": self.q1,
            "E_Y_given_R0": np.column_stack([kernels.expit(t - zeta) for t in self.th]),
            "propensity": np.column_stack([kernels.expit(lam + zeta * y)
                                           for lam in self.lam for y in (0.0, 1.0)]),
            "cell_probabilities": c.P,
        }


def compute_W(fit: IntersectionModelFit, zeta: float | None = None, observation: Observation | None = None):
    """W statistic at the observed cell of every row (or of one observation)."""
    if observation is not None:
        one = Dataset.from_observations([observation], fit.data.covariate_names, fit.data.instrument_names)
        return float(compute_W(IntersectionModelFit(fit.config, one, "model", fit.step_scale), zeta)[0])
    return fit.observed(fit.cells(zeta).W)


def _safe_ratio(num, den):
    out = np.zeros_like(num)
    ok = den != 0
    out[ok] = num[ok] / den[ok]
    return out


def efficient_score(fit: IntersectionModelFit, zeta: float) -> np.ndarray:
    """E[W^2|X]^-1 E[dW/dzeta|X] W per row, zero where E[W^2|X] vanishes."""
    h = fit.step_scale * max(1.0, abs(zeta))
    c = fit.cells(zeta)
    dW = (fit.cells(zeta + h).W - fit.cells(zeta - h).W) / (2.0 * h)
    coef = _safe_ratio(fit.expect(dW, c.P), fit.expect(c.W * c.W, c.P))
    return coef * fit.observed(c.W)


def one_step_zeta(data: Dataset, fit: IntersectionModelFit, zeta_dr: float):
    """One Newton step on the efficient score from the DR estimate.

    Returns ``(zeta_eff, influence)`` where ``influence`` holds the per-row
    plug-in influence values of zeta_eff.
    """
    score = efficient_score(fit, zeta_dr)
    s0 = float(data.average(score))
    h = OUTER_STEP * max(1.0, abs(zeta_dr))
    slope = float(data.average((efficient_score(fit, zeta_dr + h) - efficient_score(fit, zeta_dr - h)) / (2.0 * h)))
    if s0 == 0.0:
        influence = np.zeros(data.n) if abs(slope) < 1e-12 else -score / slope
        return float(zeta_dr), influence
    if abs(slope) < 1e-12:
        raise SingularUpdate(f"mean derivative of the efficient score is {slope:.3g}")
    zeta_eff = float(zeta_dr - s0 / slope)
    influence = -efficient_score(fit, zeta_eff) / slope
    return zeta_eff, influence


def efficient_phi_summand(data: Dataset, fit: IntersectionModelFit, zeta_eff: float) -> np.ndarray:
    """G^DR minus its projection on W, per row, at zeta_eff."""
    cfg = fit.config.with_params(zeta=zeta_eff)
    G = eval_G_DR(cfg, data)
    c = fit.cells(zeta_eff)
    coef = _safe_ratio(fit.expect(c.G * c.W, c.P), fit.expect(c.W * c.W, c.P))
    return G - coef * fit.observed(c.W)


def efficient_phi(data: Dataset, fit: IntersectionModelFit, zeta_eff: float, zeta_influence=None,
                  diagnostics: SolveDiagnostics | None = None):
    """Efficient estimate of phi with plug-in variance (FitResult)."""
    from .estimators import FitResult
    s = efficient_phi_summand(data, fit, zeta_eff)
    phi = float(data.average(s))
    if zeta_influence is None:
        zeta_influence = np.zeros(data.n)
    infl = np.column_stack([zeta_influence, s - phi])
    cov = infl.T @ (infl if data.weights is None else data.weights[:, None] * infl) / data.total / data.total
    cov = 0.5 * (cov + cov.T)
    diag = diagnostics or SolveDiagnostics(True, 0, 0.0, 0, method="one-step")
    cfg = fit.config
    nuisance = {"xi": cfg.iv.xi, "omega": cfg.baseline.omega, "theta": cfg.outcome.theta}
    return FitResult(EstimatorKind.IV_EFF, phi, float(zeta_eff), nuisance, cov,
                     {"zeta": slice(0, 1), "phi": slice(1, 2)}, diag,
                     notes=["plug-in variances from estimated efficient influence values"])


def estimate_efficient(data: Dataset, config: ModelConfig, choice=DEFAULT_CHOICE,
                       opts: SolveOptions | None = None, zeta_start: float = 0.0,
                       conditional: str = "auto", dr=None):
    """IV_EFF pipeline: DR fit, one-step zeta update, efficient phi."""
    from .estimators import estimate
    opts = opts or SolveOptions()
    if dr is None:
        dr = estimate(data, config, EstimatorKind.IV_DR, choice, opts, zeta_start=zeta_start)
    if dr.zeta_hat is None:
        # no missing outcomes: nothing to improve on
        return type(dr)(EstimatorKind.IV_EFF, dr.phi_hat, None, dr.nuisance, dr.covariance, dr.layout,
                        dr.diagnostics, notes=list(dr.notes))
    work = data.compressed() if data.weights is None else data
    if work.n > data.n // 2:
        work = data
    cfg = config.with_params(xi=dr.nuisance["xi"], omega=dr.nuisance["omega"],
                             theta=dr.nuisance["theta"], zeta=dr.zeta_hat)
    fit = IntersectionModelFit(cfg, work, conditional, opts.fd_step_scale)
    zeta_eff, zinf = one_step_zeta(work, fit, dr.zeta_hat)
    diag = SolveDiagnostics(True, 1, 0.0, 0, method="one-step",
                            flags=["plug_in_variance", f"conditional_{fit.conditional}"])
    return efficient_phi(work, fit, zeta_eff, zinf, diag)
