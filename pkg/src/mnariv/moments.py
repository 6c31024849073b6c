"""Per-observation estimating functions and their stacked systems.

A :class:`MomentSystem` maps a parameter vector and a :class:`Dataset` to an
``(n, m)`` matrix of moment rows.  Fitted nuisance values that a system does
not estimate (for example the IV-law coefficients in the IPW system) are read
from the ``ModelConfig`` it was built from.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .data import Dataset, Observation
from .errors import PositivityViolation, SchemaError
from .model import Design, ModelConfig, expit, iv_conditional_expectation
from .solver import fd_jacobian


class EstimatorKind(str, enum.Enum):
    CC = "CC"
    MAR_IPW = "MAR_IPW"
    IV_IPW = "IV_IPW"
    IV_OR = "IV_OR"
    IV_DR = "IV_DR"
    IV_EFF = "IV_EFF"

    @classmethod
    def parse(cls, text: str) -> "EstimatorKind":
        key = text.strip().upper().replace("-", "_")
        aliases = {"IPW": "IV_IPW", "OR": "IV_OR", "DR": "IV_DR", "EFF": "IV_EFF", "MAR": "MAR_IPW"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class InstrumentChoice:
    """User functions weighting the estimating equations.

    ``None`` selects the default: ``h1`` = the baseline-missingness design,
    ``g = q2 = u = y`` and ``h2 = q1 = v`` = the instrument vector.  Functions
    of ``(x, z)`` receive the column mapping; functions of ``(x, y)`` receive
    the column mapping and the outcome array.
    """

    h1: Callable | None = None
    g: Callable | None = None
    h2: Callable | None = None
    q1: Callable | None = None
    q2: Callable | None = None
    u: Callable | None = None
    v: Callable | None = None


DEFAULT_CHOICE = InstrumentChoice()


def _as2d(a, n):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = np.full(n, float(a))
    return a.reshape(n, -1)


class MomentSystem:
    """Named stack of moment blocks over a named parameter layout."""

    def __init__(self, name: str, layout: Sequence[tuple[str, int]], blocks, fixed=None,
                 mean_jacobian=None):
        self.name = name
        self.layout = {}
        start = 0
        for key, size in layout:
            self.layout[key] = slice(start, start + size)
            start += size
        self.dim_params = start
        self.blocks = list(blocks)
        self.labels = [lab for labels, _ in self.blocks for lab in labels]
        self.dim_moments = len(self.labels)
        self.fixed = dict(fixed or {})
        # optional analytic Jacobian of the averaged moments, (params, data) -> matrix
        self.mean_jacobian = mean_jacobian

    def __repr__(self):
        return f"MomentSystem({self.name!r}, params={self.dim_params}, moments={self.dim_moments})"

    @property
    def exactly_identified(self) -> bool:
        return self.dim_moments == self.dim_params

    def unpack(self, params) -> dict:
        params = np.asarray(params, dtype=float).ravel()
        if params.shape[0] != self.dim_params:
            raise ValueError(f"{self.name}: expected {self.dim_params} parameters, got {params.shape[0]}")
        P = dict(self.fixed)
        P.update({k: params[s] for k, s in self.layout.items()})
        return P

    def pack(self, values: dict) -> np.ndarray:
        out = np.empty(self.dim_params)
        for k, s in self.layout.items():
            out[s] = np.ravel(values[k])
        return out

    def eval_rows(self, params, data: Dataset) -> np.ndarray:
        P = self.unpack(params)
        memo = {}
        parts = [_as2d(fn(P, data, memo), data.n) for _, fn in self.blocks]
        return np.hstack(parts)

    def eval_row(self, params, obs: Observation, like: Dataset) -> np.ndarray:
        one = Dataset.from_observations([obs], like.covariate_names, like.instrument_names)
        return self.eval_rows(params, one)[0]

    def mean(self, params, data: Dataset) -> np.ndarray:
        return data.average(self.eval_rows(params, data))

    def jacobian(self, params, data: Dataset, step_scale=None) -> np.ndarray:
        return fd_jacobian(lambda p: self.mean(p, data), params, step_scale)


# shared quantities, memoised per evaluation

def _check_positivity(min_pi, config):
    if min_pi < config.positivity_floor:
        raise PositivityViolation(min_pi, config.positivity_floor)


def _weights(P, data, memo, config):
    if "w" not in memo:
        lin = data.design_matrix(config.baseline.design) @ P["omega"]
        w, min_pi = kernels.propensity_weights(data.r, lin, data.y_filled, P["zeta"][0])
        _check_positivity(min_pi, config)
        memo["w"] = w
    return memo["w"]


def _tilted_mean(P, data, memo, config):
    if "m" not in memo:
        lin = data.design_matrix(config.outcome.design) @ P["theta"]
        memo["m"] = kernels.expit(lin - P["zeta"][0])
    return memo["m"]


def _dr_terms(P, data, memo, config):
    if "g" not in memo:
        lin_b = data.design_matrix(config.baseline.design) @ P["omega"]
        lin_o = data.design_matrix(config.outcome.design) @ P["theta"]
        w, m, g, min_pi = kernels.dr_terms(data.r, data.y_filled, lin_b, lin_o, P["zeta"][0])
        _check_positivity(min_pi, config)
        memo.update(w=w, m=m, g=g)
    return memo["w"], memo["m"], memo["g"]


def _iv_probs(P, data, memo, config):
    """(n, k) matrix of P(Z_k = 1 | x)."""
    if "q" not in memo:
        iv = config.iv
        memo["q"] = np.column_stack([
            kernels.expit(data.design_matrix(d) @ P["xi"][s]) for d, s in zip(iv.designs, iv.slices)
        ])
    return memo["q"]


def _centered_instrument(fn, P, data, memo, config, key):
    """fn(x, z) - E[fn(x, Z) | x; xi]; the default fn is the instrument vector."""
    if key in memo:
        return memo[key]
    if fn is None:
        out = data.z - _iv_probs(P, data, memo, config)
    else:
        cfg = config.with_params(xi=P["xi"])
        val = _as2d(fn(data.columns), data.n)
        mean = _as2d(iv_conditional_expectation(cfg, data.columns, fn, n=data.n), data.n)
        out = val - mean
    memo[key] = out
    return out


def _y_function(fn, data, y):
    if fn is None:
        return _as2d(y, data.n)
    return _as2d(fn(data.columns, np.broadcast_to(np.asarray(y, float), (data.n,))), data.n)


def _missing_expectation(fn, data, m):
    """E[fn(x, Y) | R=0, x, z] for binary Y given the tilted mean m."""
    if fn is None:
        return m[:, None]
    return _y_function(fn, data, 1.0) * m[:, None] + _y_function(fn, data, 0.0) * (1.0 - m[:, None])


# blocks

def _iv_score_block(config):
    iv = config.iv
    labels = [f"iv[{name}]:{lab}" for name, d in zip(iv.instruments, iv.designs) for lab in d.labels]

    def fn(P, data, memo):
        q = _iv_probs(P, data, memo, config)
        return np.hstack([(data.z[:, [k]] - q[:, [k]]) * data.design_matrix(d)
                          for k, d in enumerate(iv.designs)])
    return labels, fn


def _cc_score_block(config):
    design = config.outcome.design
    labels = [f"outcome:{lab}" for lab in design.labels]

    def fn(P, data, memo):
        D = data.design_matrix(design)
        p = kernels.expit(D @ P["theta"])
        return (data.r * (data.y_filled - p))[:, None] * D
    return labels, fn


def _h1_block(config, choice):
    if choice.h1 is None:
        labels = [f"baseline:{lab}" for lab in config.baseline.design.labels]
    else:
        labels = [f"baseline:h1[{j}]" for j in range(len(config.baseline.design))]

    def fn(P, data, memo):
        w = _weights(P, data, memo, config)
        H = (data.design_matrix(config.baseline.design) if choice.h1 is None
             else _as2d(choice.h1(data.columns), data.n))
        return (w - 1.0)[:, None] * H
    return labels, fn


def _n_instrument_rows(config, fn, default):
    return len(config.iv.instruments) if fn is None else default


def _ipw_zeta_block(config, choice, n_rows):
    labels = [f"zeta:ipw[{j}]" for j in range(n_rows)]

    def fn(P, data, memo):
        w = _weights(P, data, memo, config)
        h2c = _centered_instrument(choice.h2, P, data, memo, config, "h2c")
        g = _y_function(choice.g, data, data.y_filled)
        return w[:, None] * g * h2c
    return labels, fn


def _or_zeta_block(config, choice, n_rows):
    labels = [f"zeta:or[{j}]" for j in range(n_rows)]

    def fn(P, data, memo):
        m = _tilted_mean(P, data, memo, config)
        q1c = _centered_instrument(choice.q1, P, data, memo, config, "q1c")
        q2_obs = _y_function(choice.q2, data, data.y_filled)
        q2_mis = _missing_expectation(choice.q2, data, m)
        r = data.r[:, None]
        return q1c * ((1.0 - r) * q2_mis + r * q2_obs)
    return labels, fn


def _augmented(choice_u, P, data, memo, config):
    """G^DR rows for the function u."""
    if choice_u is None:
        return _dr_terms(P, data, memo, config)[2][:, None]
    w, m, _ = _dr_terms(P, data, memo, config)
    eu = _missing_expectation(choice_u, data, m)
    u = _y_function(choice_u, data, data.y_filled)
    return w[:, None] * (u - eu) + eu


def _dr_zeta_block(config, choice, n_rows):
    labels = [f"zeta:dr[{j}]" for j in range(n_rows)]

    def fn(P, data, memo):
        vc = _centered_instrument(choice.v, P, data, memo, config, "vc")
        return vc * _augmented(choice.u, P, data, memo, config)
    return labels, fn


def _target_block(kind, config):
    def ipw(P, data, memo):
        return _weights(P, data, memo, config) * data.y_filled - P["phi"][0]

    def orr(P, data, memo):
        m = _tilted_mean(P, data, memo, config)
        return data.r * data.y_filled + (1.0 - data.r) * m - P["phi"][0]

    def dr(P, data, memo):
        return _dr_terms(P, data, memo, config)[2] - P["phi"][0]

    def cc(P, data, memo):
        return data.r * (data.y_filled - P["phi"][0])

    fns = {EstimatorKind.IV_IPW: ipw, EstimatorKind.IV_OR: orr, EstimatorKind.IV_DR: dr,
           EstimatorKind.CC: cc}
    return ["phi"], fns[kind]


def _row_count(config, fn, y_dependent=False):
    """Number of rows contributed by an instrument-type choice function."""
    if fn is None:
        return len(config.iv.instruments)
    probe = {name: np.zeros(1) for name in
             config.iv.instruments + tuple(sorted(_all_variables(config) - set(config.iv.instruments)))}
    val = fn(probe, np.zeros(1)) if y_dependent else fn(probe)
    return int(np.asarray(val, float).reshape(1, -1).shape[1])


def _all_variables(config):
    names = set(config.iv.instruments)
    names |= config.baseline.design.variables | config.outcome.design.variables
    for d in config.iv.designs:
        names |= d.variables
    return names


def _zeta_rows(config, choice, kind):
    if kind is EstimatorKind.IV_IPW:
        n_h2 = _row_count(config, choice.h2)
        n_g = 1 if choice.g is None else _row_count(config, choice.g, y_dependent=True)
        return max(n_h2, n_g)
    if kind is EstimatorKind.IV_OR:
        return _row_count(config, choice.q1)
    return _row_count(config, choice.v)


# public builders

def _logistic_information(parts, data):
    """Block-diagonal minus averaged Fisher information for logistic scores.

    ``parts`` lists ``(design, coef, row_mask)`` per independent component.
    """
    blocks = []
    for design, coef, mask in parts:
        D = data.design_matrix(design)
        p = kernels.expit(D @ coef)
        wt = p * (1.0 - p) * mask
        blocks.append(-(D.T @ (D * data.average_weights(wt)[:, None])))
    size = sum(b.shape[0] for b in blocks)
    out = np.zeros((size, size))
    k = 0
    for b in blocks:
        out[k:k + b.shape[0], k:k + b.shape[0]] = b
        k += b.shape[0]
    return out


def build_iv_score_system(config: ModelConfig) -> MomentSystem:
    """Logistic score equations for the IV law (the MLE of xi)."""
    iv = config.iv

    def jac(params, data):
        return _logistic_information(
            [(d, params[s], 1.0) for d, s in zip(iv.designs, iv.slices)], data)
    return MomentSystem("iv_score", [("xi", config.iv.xi.size)], [_iv_score_block(config)],
                        mean_jacobian=jac)


def build_cc_score_system(config: ModelConfig) -> MomentSystem:
    """Complete-case logistic score equations (the MLE of theta)."""
    design = config.outcome.design

    def jac(params, data):
        return _logistic_information([(design, params, data.r)], data)
    return MomentSystem("cc_score", [("theta", config.outcome.theta.size)], [_cc_score_block(config)],
                        mean_jacobian=jac)


def build_mar_score_system(design: Design) -> MomentSystem:
    """Logistic score for P(R=1 | x, z) under MAR."""
    labels = [f"mar:{lab}" for lab in design.labels]

    def fn(P, data, memo):
        D = data.design_matrix(design)
        return (data.r - kernels.expit(D @ P["gamma"]))[:, None] * D

    def jac(params, data):
        return _logistic_information([(design, params, 1.0)], data)
    return MomentSystem("mar_score", [("gamma", len(design))], [(labels, fn)], mean_jacobian=jac)


def build_ipw_system(config: ModelConfig, choice: InstrumentChoice = DEFAULT_CHOICE,
                     fixed_zeta: float | None = None) -> MomentSystem:
    """IPW equations in (omega, zeta) with xi fixed at ``config.iv.xi``.

    Rows: ``(R/pi - 1) h1(X, Z)`` and ``(R/pi) g(X, Y) {h2 - E[h2 | X]}``.
    With ``fixed_zeta`` the zeta rows are dropped and zeta is held at that value.
    """
    fixed = {"xi": config.iv.xi}
    blocks = [_h1_block(config, choice)]
    layout = [("omega", config.baseline.omega.size)]
    if fixed_zeta is None:
        layout.append(("zeta", 1))
        blocks.append(_ipw_zeta_block(config, choice, _zeta_rows(config, choice, EstimatorKind.IV_IPW)))
    else:
        fixed["zeta"] = np.array([float(fixed_zeta)])
    return MomentSystem("ipw", layout, blocks, fixed)


def build_or_system(config: ModelConfig, choice: InstrumentChoice = DEFAULT_CHOICE) -> MomentSystem:
    """Outcome-regression equation for zeta with xi and theta fixed from ``config``."""
    fixed = {"xi": config.iv.xi, "theta": config.outcome.theta}
    rows = _zeta_rows(config, choice, EstimatorKind.IV_OR)
    return MomentSystem("or", [("zeta", 1)], [_or_zeta_block(config, choice, rows)], fixed)


def build_dr_system(config: ModelConfig, choice: InstrumentChoice = DEFAULT_CHOICE) -> MomentSystem:
    """Doubly robust equations in (omega, zeta); xi and theta fixed from ``config``."""
    fixed = {"xi": config.iv.xi, "theta": config.outcome.theta}
    rows = _zeta_rows(config, choice, EstimatorKind.IV_DR)
    return MomentSystem("dr", [("omega", config.baseline.omega.size), ("zeta", 1)],
                        [_h1_block(config, choice), _dr_zeta_block(config, choice, rows)], fixed)


def build_stacked_system(kind, config: ModelConfig, choice: InstrumentChoice = DEFAULT_CHOICE,
                         mar_design: Design | None = None, fixed_zeta: float | None = None) -> MomentSystem:
    """Full system over every estimated parameter, ending in the target row for phi."""
    kind = EstimatorKind.parse(kind) if isinstance(kind, str) else EstimatorKind(kind)
    n_xi, n_om, n_th = config.iv.xi.size, config.baseline.omega.size, config.outcome.theta.size
    if kind is EstimatorKind.CC:
        return MomentSystem("stacked_cc", [("phi", 1)], [_target_block(kind, config)])
    if kind is EstimatorKind.MAR_IPW:
        if mar_design is None:
            raise ValueError("MAR_IPW needs the propensity design")
        score = build_mar_score_system(mar_design)

        def target(P, data, memo):
            pi = kernels.expit(data.design_matrix(mar_design) @ P["gamma"])
            return data.r * data.y_filled / pi - P["phi"][0]
        return MomentSystem("stacked_mar_ipw", [("gamma", len(mar_design)), ("phi", 1)],
                            score.blocks + [(["phi"], target)])
    if kind is EstimatorKind.IV_IPW:
        if fixed_zeta is not None:
            return MomentSystem("stacked_ipw_fixed_zeta", [("omega", n_om), ("phi", 1)],
                                [_h1_block(config, choice), _target_block(kind, config)],
                                {"zeta": np.array([float(fixed_zeta)])})
        rows = _zeta_rows(config, choice, kind)
        return MomentSystem("stacked_ipw", [("xi", n_xi), ("omega", n_om), ("zeta", 1), ("phi", 1)],
                            [_iv_score_block(config), _h1_block(config, choice),
                             _ipw_zeta_block(config, choice, rows), _target_block(kind, config)])
    if kind is EstimatorKind.IV_OR:
        rows = _zeta_rows(config, choice, kind)
        return MomentSystem("stacked_or", [("xi", n_xi), ("theta", n_th), ("zeta", 1), ("phi", 1)],
                            [_iv_score_block(config), _cc_score_block(config),
                             _or_zeta_block(config, choice, rows), _target_block(kind, config)])
    if kind in (EstimatorKind.IV_DR, EstimatorKind.IV_EFF):
        rows = _zeta_rows(config, choice, EstimatorKind.IV_DR)
        return MomentSystem("stacked_dr",
                            [("xi", n_xi), ("omega", n_om), ("zeta", 1), ("theta", n_th), ("phi", 1)],
                            [_iv_score_block(config), _h1_block(config, choice),
                             _dr_zeta_block(config, choice, rows), _cc_score_block(config),
                             _target_block(EstimatorKind.IV_DR, config)])
    raise SchemaError(f"no stacked system for {kind}")


def eval_G_DR(config: ModelConfig, data: Dataset, u: Callable | None = None) -> np.ndarray:
    """Augmented IPW term G^DR per row at the parameters stored in ``config``.

    ``(R/pi){u - E[u | R=0, X, Z]} + E[u | R=0, X, Z]``; shape (n,) for the
    default ``u = y`` and (n, d) otherwise.
    """
    P = {"zeta": np.array([config.zeta]), "omega": config.baseline.omega,
         "theta": config.outcome.theta}
    out = _augmented(u, P, data, {}, config)
    return out[:, 0] if u is None else out
