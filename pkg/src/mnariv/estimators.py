"""Estimation pipelines: nuisance fits, moment solves, sandwich variances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .data import Dataset
from .errors import InsufficientData, NoConvergence, Separation, SingularBread
from .model import Design, ModelConfig
from .moments import (DEFAULT_CHOICE, EstimatorKind, InstrumentChoice, MomentSystem,
                      build_cc_score_system, build_dr_system, build_ipw_system,
                      build_iv_score_system, build_mar_score_system, build_or_system,
                      build_stacked_system, eval_G_DR)
from .solver import (COND_LIMIT, SolveDiagnostics, SolveOptions, gmm_minimize, gmm_two_step,
                     solve_root, solve_scalar)

Z95 = 1.959964
SEPARATION_NORM = 30.0
# fitted linear predictors this large mean probabilities within ~3e-7 of 0 or 1
SEPARATION_LINEAR = 15.0


@dataclass
class FitResult:
    estimator: EstimatorKind
    phi_hat: float
    zeta_hat: float | None
    nuisance: dict
    covariance: np.ndarray | None
    layout: dict
    diagnostics: SolveDiagnostics
    se_phi: float = float("nan")
    se_zeta: float = float("nan")
    ci_phi: tuple = (float("nan"), float("nan"))
    ci_zeta: tuple = (float("nan"), float("nan"))
    p_zeta: float = float("nan")
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.covariance is not None:
            cov = self.covariance
            if "phi" in self.layout:
                self.se_phi = _se(cov, self.layout["phi"])
            if "zeta" in self.layout and self.zeta_hat is not None:
                self.se_zeta = _se(cov, self.layout["zeta"])
        self.ci_phi = wald_interval(self.phi_hat, self.se_phi)
        if self.zeta_hat is not None:
            self.ci_zeta = wald_interval(self.zeta_hat, self.se_zeta)
            if self.se_zeta > 0:
                self.p_zeta = float(2.0 * stats.norm.sf(abs(self.zeta_hat / self.se_zeta)))

    def covers(self, phi0=None, zeta0=None) -> dict:
        out = {}
        if phi0 is not None:
            out["phi"] = bool(self.ci_phi[0] <= phi0 <= self.ci_phi[1])
        if zeta0 is not None and self.zeta_hat is not None:
            out["zeta"] = bool(self.ci_zeta[0] <= zeta0 <= self.ci_zeta[1])
        return out

    def to_dict(self) -> dict:
        f = lambda v: None if v is None or not np.isfinite(v) else float(v)
        return {
            "estimator": self.estimator.value,
            "phi_hat": f(self.phi_hat),
            "se_phi": f(self.se_phi),
            "ci_phi": [f(v) for v in self.ci_phi],
            "zeta_hat": f(self.zeta_hat),
            "se_zeta": f(self.se_zeta),
            "ci_zeta": [f(v) for v in self.ci_zeta] if self.zeta_hat is not None else None,
            "p_value_zeta": f(self.p_zeta),
            "nuisance": {k: np.ravel(v).tolist() for k, v in self.nuisance.items()},
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "layout": {k: [s.start, s.stop] for k, s in self.layout.items()},
            "diagnostics": self.diagnostics.to_dict(),
            "notes": list(self.notes),
        }


def _se(cov, sl):
    v = float(cov[sl, sl][0, 0])
    return float(np.sqrt(v)) if v >= 0 else float("nan")


def wald_interval(point, se):
    return (point - Z95 * se, point + Z95 * se)


# nuisance fits

def _logistic_fit(system: MomentSystem, data: Dataset, designs, opts, what, allow_boundary=False):
    if allow_boundary:
        # extended MLE: iterate until the score vanishes to tolerance, which
        # drives separated cells to fitted probabilities at 0 or 1
        return solve_root(system, data, np.zeros(system.dim_params), opts)
    try:
        x, diag = solve_root(system, data, np.zeros(system.dim_params), opts)
    except NoConvergence as exc:
        best = exc.best
        if best is not None and np.max(np.abs(best)) > 0.5 * SEPARATION_NORM:
            raise Separation(f"{what}: logistic MLE diverges (separation)") from exc
        raise
    if np.max(np.abs(x)) > SEPARATION_NORM:
        raise Separation(f"{what}: coefficient norm {np.max(np.abs(x)):.3g} exceeds {SEPARATION_NORM}")
    for D, sl in designs:
        lin = data.design_matrix(D) @ x[sl]
        if np.max(np.abs(lin)) > SEPARATION_LINEAR:
            raise Separation(f"{what}: fitted probabilities at 0 or 1 (separation)")
    return x, diag


def fit_iv_density(data: Dataset, config: ModelConfig, opts: SolveOptions | None = None) -> np.ndarray:
    """Logistic MLE of xi, one component per binary instrument."""
    iv = config.iv
    x, _ = _logistic_fit(build_iv_score_system(config), data, list(zip(iv.designs, iv.slices)),
                         opts, "IV law")
    return x


def fit_cc_outcome(data: Dataset, config: ModelConfig, opts: SolveOptions | None = None,
                   allow_boundary: bool = False) -> np.ndarray:
    """Complete-case logistic MLE of theta (rows with r=1 only).

    Separation raises :class:`Separation` unless ``allow_boundary`` is set, in
    which case the returned coefficients put the separated cells at fitted
    probabilities within the solver tolerance of 0 or 1.
    """
    design = config.outcome.design
    # weights may be probabilities, so the observed row count also qualifies
    if data.n_observed < len(design) and int(np.sum(data.r == 1)) < len(design):
        raise InsufficientData(f"{data.n_observed} complete cases for a {len(design)}-term outcome design")
    obs = data.subset(data.r == 1)
    x, _ = _logistic_fit(build_cc_score_system(config), obs, [(design, slice(None))], opts,
                         "complete-case outcome", allow_boundary)
    return x


def fit_mar_propensity(data: Dataset, design: Design, opts: SolveOptions | None = None) -> np.ndarray:
    x, _ = _logistic_fit(build_mar_score_system(design), data, [(design, slice(None))], opts,
                         "MAR propensity")
    return x


def default_mar_design(data: Dataset) -> Design:
    """Main-effects logistic propensity on (z, x)."""
    return Design.main_effects(list(data.instrument_names) + list(data.covariate_names))


# variance

def sandwich_variance(stacked: MomentSystem, data: Dataset, delta, estimating_map=None,
                      step_scale=None) -> np.ndarray:
    """Sandwich covariance of the stacked estimate ``delta``.

    Exactly identified: ``B^-1 S B^-T / n`` with B the finite-difference
    Jacobian of the averaged moments and S the mean outer product of the
    per-row moments.  For over-identified systems pass the ``(p, m)`` matrix A
    whose product with the moments is solved exactly (``G' W`` on GMM rows);
    the result is ``(AB)^-1 A S A' (AB)^-T / n``.
    """
    delta = np.asarray(delta, float)
    rows = stacked.eval_rows(delta, data)
    n = data.total
    B = stacked.jacobian(delta, data, step_scale)
    S = rows.T @ (rows if data.weights is None else data.weights[:, None] * rows) / n
    if estimating_map is not None:
        A = np.asarray(estimating_map, float)
        B, S = A @ B, A @ S @ A.T
    if B.shape[0] != B.shape[1]:
        raise ValueError("over-identified stacked system needs an estimating_map")
    if not np.all(np.isfinite(B)) or np.linalg.cond(B) > COND_LIMIT:
        raise SingularBread(f"{stacked.name}: bread matrix is numerically singular")
    Binv = np.linalg.inv(B)
    V = Binv @ S @ Binv.T / n
    return 0.5 * (V + V.T)


def _gmm_map(stacked: MomentSystem, own: MomentSystem, delta, data, weight, step_scale=None):
    """Estimating map A for a stacked system whose ``own`` block was solved by GMM."""
    own_rows = [i for i, lab in enumerate(stacked.labels) if lab in set(own.labels)]
    own_params = np.concatenate([np.arange(stacked.dim_params)[stacked.layout[k]] for k in own.layout])
    other_rows = [i for i in range(stacked.dim_moments) if i not in set(own_rows)]
    other_params = [j for j in range(stacked.dim_params) if j not in set(own_params)]
    P = stacked.unpack(delta)
    own_x = own.pack(P)
    # nuisances inside ``own`` are fixed at the stacked values through its config
    J = own.jacobian(own_x, data, step_scale)
    A = np.zeros((stacked.dim_params, stacked.dim_moments))
    A[np.ix_(own_params, own_rows)] = J.T @ weight
    A[np.ix_(other_params, other_rows)] = np.eye(len(other_params))
    return A


# pipelines

def _solve_own(system: MomentSystem, data, x0, opts, diag_notes):
    """Root when exactly identified, two-step GMM otherwise."""
    if system.exactly_identified:
        try:
            return solve_root(system, data, x0, opts)
        except NoConvergence:
            if system.dim_params == 1:
                try:
                    f = lambda t: float(system.mean(np.array([t]), data)[0])
                    root = solve_scalar(f, opts)
                    res = abs(f(root))
                    return np.array([root]), SolveDiagnostics(True, 0, res, 0, method="bracketing")
                except Exception:
                    pass
            # no exact root (e.g. a misspecified propensity): minimise the squared norm
            x, diag = gmm_minimize(system, data, x0, None, opts)
            diag.flags.append("no_exact_root_minimised_norm")
            diag_notes.append("no exact root; squared moment norm minimised")
            return x, diag
    return gmm_two_step(system, data, x0, opts)


def _warm_omega(data, config, opts):
    """MAR logistic fit of R on the baseline design; zeros if that fit fails."""
    try:
        return fit_mar_propensity(data, config.baseline.design, opts)
    except (Separation, NoConvergence, InsufficientData):
        return np.zeros(config.baseline.omega.size)


def _fully_observed_result(data, kind):
    y = data.y_filled
    phi = float(data.average(y))
    var = float(data.average((y - phi) ** 2)) / data.total
    diag = SolveDiagnostics(True, 0, 0.0, 0, method="closed-form", flags=["fully_observed"])
    return FitResult(kind, phi, None, {}, np.array([[var]]), {"phi": slice(0, 1)}, diag,
                     notes=["no missing outcomes: estimate is the sample mean"])


def estimate(data: Dataset, config: ModelConfig, kind, choice: InstrumentChoice = DEFAULT_CHOICE,
             opts: SolveOptions | None = None, *, mar_design: Design | None = None,
             fix_zeta: float | None = None, zeta_start: float = 0.0,
             compress: bool = True) -> FitResult:
    """Fit one estimator end to end and attach its sandwich covariance."""
    kind = EstimatorKind.parse(kind) if isinstance(kind, str) else EstimatorKind(kind)
    opts = opts or SolveOptions()
    if data.n_observed == 0:
        raise InsufficientData("no observed outcomes")
    if data.fully_observed:
        return _fully_observed_result(data, kind)
    if compress and data.weights is None:
        # discrete data collapses to a few weighted rows; every average is unchanged
        small = data.compressed()
        if small.n <= data.n // 2:
            data = small

    if kind is EstimatorKind.CC:
        stacked = build_stacked_system(kind, config)
        obs = data.subset(data.r == 1)
        phi = float(obs.average(obs.y_filled))
        delta = np.array([phi])
        diag = SolveDiagnostics(True, 0, float(np.max(np.abs(stacked.mean(delta, data)))), 0,
                                method="closed-form")
        cov = sandwich_variance(stacked, data, delta, step_scale=opts.fd_step_scale)
        return FitResult(kind, phi, None, {}, cov, stacked.layout, diag)

    if kind is EstimatorKind.MAR_IPW:
        design = mar_design or default_mar_design(data)
        gamma = fit_mar_propensity(data, design, opts)
        pi = kernels.expit(data.design_matrix(design) @ gamma)
        phi = float(data.average(data.r * data.y_filled / pi))
        stacked = build_stacked_system(kind, config, mar_design=design)
        delta = np.concatenate([gamma, [phi]])
        diag = SolveDiagnostics(True, 0, float(np.max(np.abs(stacked.mean(delta, data)))), 0,
                                method="newton")
        cov = sandwich_variance(stacked, data, delta, step_scale=opts.fd_step_scale)
        return FitResult(kind, phi, None, {"gamma": gamma}, cov, stacked.layout, diag)

    if kind is EstimatorKind.IV_EFF:
        from .efficiency import estimate_efficient
        return estimate_efficient(data, config, choice, opts, zeta_start=zeta_start)

    data.require_mnar_ready()
    notes = []
    if kind is EstimatorKind.IV_IPW and fix_zeta is not None:
        cfg = config
        own = build_ipw_system(cfg, choice, fixed_zeta=fix_zeta)
        x, diag = _solve_own(own, data, np.zeros(own.dim_params), opts, notes)
        P = own.unpack(x)
        cfg = cfg.with_params(omega=P["omega"], zeta=fix_zeta)
        w, _ = kernels.propensity_weights(data.r, data.design_matrix(cfg.baseline.design) @ P["omega"],
                                          data.y_filled, fix_zeta)
        phi = float(data.average(w * data.y_filled))
        stacked = build_stacked_system(kind, cfg, choice, fixed_zeta=fix_zeta)
        delta = np.concatenate([P["omega"], [phi]])
        cov = sandwich_variance(stacked, data, delta, step_scale=opts.fd_step_scale)
        return FitResult(kind, phi, None, {"omega": P["omega"]}, cov, stacked.layout, diag,
                         notes=[f"zeta fixed at {fix_zeta}"] + notes)

    xi = fit_iv_density(data, config, opts)
    cfg = config.with_params(xi=xi)
    nuisance = {"xi": xi}
    if kind in (EstimatorKind.IV_OR, EstimatorKind.IV_DR):
        try:
            theta = fit_cc_outcome(data, cfg, opts)
        except Separation:
            theta = fit_cc_outcome(data, cfg, opts, allow_boundary=True)
            notes.append("complete-case outcome fit is on the boundary (separation)")
        cfg = cfg.with_params(theta=theta)
        nuisance["theta"] = theta

    if kind is EstimatorKind.IV_IPW:
        own = build_ipw_system(cfg, choice)
    elif kind is EstimatorKind.IV_OR:
        own = build_or_system(cfg, choice)
    else:
        own = build_dr_system(cfg, choice)
    x0 = np.zeros(own.dim_params)
    x0[own.layout["zeta"]] = zeta_start
    if "omega" in own.layout:
        x0[own.layout["omega"]] = _warm_omega(data, cfg, opts)
    x, diag = _solve_own(own, data, x0, opts, notes)
    if any("separation" in note for note in notes):
        diag.flags.append("outcome_separation")
    P = own.unpack(x)
    zeta = float(P["zeta"][0])
    cfg = cfg.with_params(zeta=zeta, omega=P.get("omega") if "omega" in own.layout else None)
    if "omega" in own.layout:
        nuisance["omega"] = P["omega"]

    if kind is EstimatorKind.IV_IPW:
        lin = data.design_matrix(cfg.baseline.design) @ P["omega"]
        w, _ = kernels.propensity_weights(data.r, lin, data.y_filled, zeta)
        phi = float(data.average(w * data.y_filled))
    elif kind is EstimatorKind.IV_OR:
        m = kernels.expit(data.design_matrix(cfg.outcome.design) @ cfg.outcome.theta - zeta)
        phi = float(data.average(data.r * data.y_filled + (1.0 - data.r) * m))
    else:
        phi = float(data.average(eval_G_DR(cfg, data)))

    stacked = build_stacked_system(kind, cfg, choice)
    values = dict(nuisance, zeta=np.array([zeta]), phi=np.array([phi]))
    delta = stacked.pack(values)
    A = None
    if not own.exactly_identified or "no_exact_root_minimised_norm" in diag.flags:
        weight = getattr(diag, "weight", None)
        if weight is None:
            weight = np.eye(own.dim_moments)
        A = _gmm_map(stacked, own, delta, data, weight, opts.fd_step_scale)
    cov = sandwich_variance(stacked, data, delta, A, step_scale=opts.fd_step_scale)
    return FitResult(kind, phi, zeta, nuisance, cov, stacked.layout, diag, notes=notes)


def estimate_many(data: Dataset, config: ModelConfig, kinds, **kwargs) -> dict:
    return {EstimatorKind.parse(k) if isinstance(k, str) else k: estimate(data, config, k, **kwargs)
            for k in kinds}
