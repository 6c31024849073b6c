"""Parametric pieces of the selection model and their pointwise evaluation.

Every evaluator takes ``cols``, a mapping from covariate/instrument names to
scalars or equal-length arrays, so the same code serves single observations
and whole datasets.  The joint law is factorised as

    P(r, y, z | x) ∝ exp{(r - 1) eta(x, y, z)} f(y | R=1, x, z) P(r | Y=0, x, z) q(z | x)

with ``eta`` the log odds-ratio selection-bias function (zero at y = 0).
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import PositivityViolation, SchemaError

Term = tuple[str, ...]


def expit(t):
    """Logistic function, 1 / (1 + exp(-t)); saturates instead of overflowing."""
    if np.ndim(t) == 0:
        return float(kernels.expit(np.array([float(t)]))[0])
    return kernels.expit(np.asarray(t, dtype=float))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _parse_term(token: str) -> Term:
    token = token.strip()
    if token in ("1", "", "intercept"):
        return ()
    return tuple(part.strip() for part in token.split(":"))


@dataclass(frozen=True)
class Design:
    """An ordered list of product terms; the empty term is the intercept.

    >>> Design.parse("1 + z + x1 + x1:z").labels
    ('1', 'z', 'x1', 'x1:z')
    """

    terms: tuple[Term, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))
        if len(set(self.terms)) != len(self.terms):
            raise SchemaError(f"duplicate design terms: {self.labels}")

    @classmethod
    def parse(cls, spec: str | Sequence[str]) -> "Design":
        tokens = spec.replace(",", "+").split("+") if isinstance(spec, str) else spec
        return cls(tuple(_parse_term(t) for t in tokens))

    @classmethod
    def main_effects(cls, names: Sequence[str], intercept: bool = True) -> "Design":
        return cls(((),) * intercept + tuple((n,) for n in names))

    @classmethod
    def saturated(cls, names: Sequence[str]) -> "Design":
        """Intercept, main effects and every interaction, ordered by degree."""
        terms = [()]
        for k in range(1, len(names) + 1):
            terms.extend(itertools.combinations(names, k))
        return cls(tuple(terms))

    def __len__(self):
        return len(self.terms)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(":".join(t) if t else "1" for t in self.terms)

    @property
    def variables(self) -> set[str]:
        return {v for t in self.terms for v in t}

    def matrix(self, cols: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        if n is None:
            n = max((np.size(v) for v in cols.values()), default=1)
        out = np.ones((n, len(self.terms)))
        for j, term in enumerate(self.terms):
            for name in term:
                try:
                    out[:, j] *= cols[name]
                except KeyError:
                    raise SchemaError(f"design references unknown column {name!r}") from None
        return out

    def __str__(self):
        return " + ".join(self.labels)


class SelectionBiasForm(enum.Enum):
    LINEAR_IN_Y = "linear_in_y"


@dataclass(frozen=True)
class SelectionBiasSpec:
    """eta(x, y, z; zeta); only the linear form ``zeta * y`` is built in."""

    zeta: float = 0.0
    form: SelectionBiasForm = SelectionBiasForm.LINEAR_IN_Y

    def __call__(self, cols, y, zeta=None):
        zeta = self.zeta if zeta is None else zeta
        return zeta * np.asarray(y, dtype=float)


def _as_params(values, design, what):
    values = np.zeros(len(design)) if values is None else np.asarray(values, dtype=float).ravel()
    if values.shape[0] != len(design):
        raise SchemaError(f"{what}: {values.shape[0]} parameters for {len(design)} design terms")
    return values


@dataclass(frozen=True, eq=False)
class BaselineMissingnessSpec:
    """Baseline log-odds lambda(x, z) = logit P(R=1 | Y=0, x, z) = design @ omega."""

    design: Design
    omega: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "omega", _as_params(self.omega, self.design, "omega"))


@dataclass(frozen=True, eq=False)
class CompleteCaseOutcomeSpec:
    """Complete-case outcome law P(Y=1 | R=1, x, z) = expit(design @ theta)."""

    design: Design
    theta: np.ndarray = None
    family: str = "bernoulli_logit"

    def __post_init__(self):
        if self.family != "bernoulli_logit":
            raise SchemaError(f"unsupported outcome family {self.family!r}")
        object.__setattr__(self, "theta", _as_params(self.theta, self.design, "theta"))


@dataclass(frozen=True, eq=False)
class IvDensitySpec:
    """Binary instruments, conditionally independent given x, each logistic.

    ``xi`` is the concatenation of the per-instrument coefficient vectors.
    """

    instruments: tuple[str, ...]
    designs: tuple[Design, ...]
    xi: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "instruments", tuple(self.instruments))
        object.__setattr__(self, "designs", tuple(self.designs))
        if len(self.instruments) != len(self.designs):
            raise SchemaError("one design per instrument is required")
        for name, d in zip(self.instruments, self.designs):
            if set(self.instruments) & d.variables:
                raise SchemaError(f"IV design for {name!r} must depend on covariates only")
        total = sum(len(d) for d in self.designs)
        xi = np.zeros(total) if self.xi is None else np.asarray(self.xi, dtype=float).ravel()
        if xi.shape[0] != total:
            raise SchemaError(f"xi: {xi.shape[0]} parameters for {total} design terms")
        object.__setattr__(self, "xi", xi)

    @property
    def slices(self) -> list[slice]:
        out, start = [], 0
        for d in self.designs:
            out.append(slice(start, start + len(d)))
            start += len(d)
        return out


@dataclass(frozen=True, eq=False)
class ModelConfig:
    selection_bias: SelectionBiasSpec
    baseline: BaselineMissingnessSpec
    outcome: CompleteCaseOutcomeSpec
    iv: IvDensitySpec
    positivity_floor: float = 1e-6

    def __post_init__(self):
        if not self.positivity_floor > 0:
            raise SchemaError("positivity_floor must be positive")

    @property
    def zeta(self) -> float:
        return self.selection_bias.zeta

    def with_params(self, *, zeta=None, omega=None, theta=None, xi=None) -> "ModelConfig":
        """Copy with some parameter vectors replaced."""
        cfg = self
        if zeta is not None:
            cfg = replace(cfg, selection_bias=replace(cfg.selection_bias, zeta=float(np.ravel(zeta)[0])))
        if omega is not None:
            cfg = replace(cfg, baseline=replace(cfg.baseline, omega=omega))
        if theta is not None:
            cfg = replace(cfg, outcome=replace(cfg.outcome, theta=theta))
        if xi is not None:
            cfg = replace(cfg, iv=replace(cfg.iv, xi=xi))
        return cfg

    def with_designs(self, *, baseline=None, outcome=None, iv=None) -> "ModelConfig":
        cfg = self
        if baseline is not None:
            cfg = replace(cfg, baseline=BaselineMissingnessSpec(baseline))
        if outcome is not None:
            cfg = replace(cfg, outcome=CompleteCaseOutcomeSpec(outcome))
        if iv is not None:
            cfg = replace(cfg, iv=IvDensitySpec(cfg.iv.instruments, iv))
        return cfg

    def describe(self) -> dict:
        return {
            "selection_bias": {"form": self.selection_bias.form.value, "zeta": self.zeta},
            "baseline": {"design": list(self.baseline.design.labels), "omega": self.baseline.omega.tolist()},
            "outcome": {"design": list(self.outcome.design.labels), "theta": self.outcome.theta.tolist(),
                        "family": self.outcome.family},
            "iv": {"instruments": list(self.iv.instruments),
                   "designs": [list(d.labels) for d in self.iv.designs], "xi": self.iv.xi.tolist()},
            "positivity_floor": self.positivity_floor,
        }


def default_config(covariates: Sequence[str], instruments: Sequence[str]) -> ModelConfig:
    """Main-effects designs everywhere, zero parameters."""
    main = Design.main_effects(list(instruments) + list(covariates))
    return ModelConfig(
        SelectionBiasSpec(0.0),
        BaselineMissingnessSpec(main),
        CompleteCaseOutcomeSpec(main),
        IvDensitySpec(tuple(instruments), tuple(Design.main_effects(covariates) for _ in instruments)),
    )


# pointwise evaluation

def _y_array(y, n):
    return np.broadcast_to(np.asarray(y, dtype=float), (n,))


def _n_of(cols):
    return max((np.size(v) for v in cols.values()), default=1)


def _scalar_out(cols, value):
    if all(np.ndim(v) == 0 for v in cols.values()):
        return float(np.ravel(value)[0])
    return value


def eval_selection_bias(spec: SelectionBiasSpec, cols, y):
    return spec(cols, y)


def eval_baseline_logodds(config: ModelConfig, cols):
    n = _n_of(cols)
    return _scalar_out(cols, config.baseline.design.matrix(cols, n) @ config.baseline.omega)


def eval_extended_propensity(config: ModelConfig, cols, y, check=True):
    """pi(x, y, z) = expit(lambda(x, z) + eta(x, y, z)).

    Raises PositivityViolation if any value is below ``config.positivity_floor``.
    """
    n = max(_n_of(cols), np.size(y))
    lin = config.baseline.design.matrix(cols, n) @ config.baseline.omega
    pi = expit(lin + config.selection_bias(cols, _y_array(y, n)))
    if check and np.min(pi) < config.positivity_floor:
        raise PositivityViolation(np.min(pi), config.positivity_floor)
    return _scalar_out({**cols, "_y": y}, pi)


def eval_complete_case_prob(config: ModelConfig, cols):
    n = _n_of(cols)
    return _scalar_out(cols, expit(config.outcome.design.matrix(cols, n) @ config.outcome.theta))


def eval_tilted_outcome(config: ModelConfig, cols, y_query):
    """P(Y = y_query | R=0, x, z): the complete-case law tilted by exp(-eta)."""
    n = _n_of(cols)
    lin = config.outcome.design.matrix(cols, n) @ config.outcome.theta
    eta1 = config.selection_bias(cols, np.ones(n))
    p1 = expit(lin - eta1)
    yq = _y_array(y_query, n)
    return _scalar_out(cols, np.where(yq == 1, p1, 1.0 - p1))


def eval_conditional_mean_missing(config: ModelConfig, cols):
    """E(Y | R=0, x, z) for the binary outcome."""
    return eval_tilted_outcome(config, cols, 1)


def eval_iv_probability(config: ModelConfig, cols):
    """q(z | x): product of per-instrument Bernoulli probabilities at the given z."""
    n = _n_of(cols)
    prob = np.ones(n)
    iv = config.iv
    for name, design, sl in zip(iv.instruments, iv.designs, iv.slices):
        q1 = expit(design.matrix(cols, n) @ iv.xi[sl])
        z = np.broadcast_to(np.asarray(cols[name], dtype=float), (n,))
        prob = prob * np.where(z == 1, q1, 1.0 - q1)
    return _scalar_out(cols, prob)


def instrument_support(k: int):
    """All 2**k binary instrument configurations."""
    return list(itertools.product((0.0, 1.0), repeat=k))


def iv_conditional_expectation(config: ModelConfig, cols, fn: Callable, n: int | None = None):
    """E[fn(cols) | X] under the IV law, by exact enumeration of the binary support."""
    n = _n_of(cols) if n is None else n
    iv = config.iv
    total = None
    for combo in instrument_support(len(iv.instruments)):
        sub = dict(cols)
        sub.update({name: np.full(n, v) for name, v in zip(iv.instruments, combo)})
        term = eval_iv_probability(config, sub)
        val = np.asarray(fn(sub), dtype=float)
        contrib = (term.reshape(-1, *([1] * (val.ndim - 1))) if val.ndim > 1 else term) * val
        total = contrib if total is None else total + contrib
    return total
