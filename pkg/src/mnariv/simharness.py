"""Monte Carlo study under the binary generator with two covariates and one instrument.

Each replicate draws its own stream: ``generate_dataset(n, base_seed + rep)``
seeds a PCG64 generator and draws the columns X1, X2, Z, Y, R in that order.
"""
from __future__ import annotations

import enum
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .errors import MnarIvError
from .estimators import estimate
from .model import (BaselineMissingnessSpec, CompleteCaseOutcomeSpec, Design, IvDensitySpec,
                    ModelConfig, SelectionBiasSpec, expit)
from .moments import EstimatorKind
from .solver import SolveOptions

log = logging.getLogger(__name__)

# generator coefficients
P_X1, P_X2 = 0.4, 0.6
XI_TRUE = np.array([0.4, 0.9, -0.7, -0.8])          # 1, x1, x2, x1*x2
BETA_Y = np.array([1.0, -1.2, 1.5])                  # 1, x1, x2
OMEGA_TRUE = np.array([-1.5, 2.5, 0.8, -1.2])        # 1, z, x1, x2
ZETA_TRUE = 1.8
FAILURE_WARN_FRACTION = 0.02


class ScenarioKind(str, enum.Enum):
    CORRECT_BOTH = "CorrectBoth"
    MISSPEC_PROPENSITY = "MisspecPropensity"
    MISSPEC_OUTCOME = "MisspecOutcome"

    @classmethod
    def parse(cls, text) -> "ScenarioKind":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        aliases = {"iii": cls.CORRECT_BOTH, "correct": cls.CORRECT_BOTH, "correctboth": cls.CORRECT_BOTH,
                   "i": cls.MISSPEC_PROPENSITY, "misspecpropensity": cls.MISSPEC_PROPENSITY,
                   "ii": cls.MISSPEC_OUTCOME, "misspecoutcome": cls.MISSPEC_OUTCOME}
        if key not in aliases:
            raise ValueError(f"unknown scenario {text!r}")
        return aliases[key]


def generate_dataset(n: int, seed: int) -> Dataset:
    """Draw n rows from the generator; y is blanked where r = 0."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    x1 = (rng.random(n) < P_X1).astype(float)
    x2 = (rng.random(n) < P_X2).astype(float)
    pz = expit(XI_TRUE[0] + XI_TRUE[1] * x1 + XI_TRUE[2] * x2 + XI_TRUE[3] * x1 * x2)
    z = (rng.random(n) < pz).astype(float)
    y = (rng.random(n) < expit(BETA_Y[0] + BETA_Y[1] * x1 + BETA_Y[2] * x2)).astype(float)
    lin = OMEGA_TRUE[0] + OMEGA_TRUE[1] * z + OMEGA_TRUE[2] * x1 + OMEGA_TRUE[3] * x2 + ZETA_TRUE * y
    r = (rng.random(n) < expit(lin)).astype(float)
    return Dataset(np.column_stack([x1, x2]), z, r, np.where(r == 1, y, np.nan), ("x1", "x2"), ("z",))


def population_cells():
    """Exact joint law of (x1, x2, z, y, r) under the generator: list of (cell, prob)."""
    out = []
    for x1, x2, z, y, r in itertools.product((0, 1), repeat=5):
        px = (P_X1 if x1 else 1 - P_X1) * (P_X2 if x2 else 1 - P_X2)
        qz = expit(XI_TRUE @ [1, x1, x2, x1 * x2])
        py = expit(BETA_Y @ [1, x1, x2])
        pr = expit(OMEGA_TRUE @ [1, z, x1, x2] + ZETA_TRUE * y)
        p = px * (qz if z else 1 - qz) * (py if y else 1 - py) * (pr if r else 1 - pr)
        out.append(((x1, x2, z, y, r), p))
    return out


def true_phi() -> float:
    """E(Y) under the generator (0.769 to three decimals)."""
    return float(sum(p for (x1, x2, z, y, r), p in population_cells() if y == 1))


PHI_TRUE = true_phi()

IV_DESIGN = Design.parse("1, x1, x2, x1:x2")
PROPENSITY_CORRECT = Design.parse("1, z, x1, x2")
PROPENSITY_WRONG = Design.parse("1, x1, z, x1:z")
OUTCOME_CORRECT = Design.saturated(("x1", "x2", "z"))
OUTCOME_WRONG = Design.parse("1, x1")


def scenario_config(kind) -> ModelConfig:
    """Analysis model for a scenario; parameters start at zero."""
    kind = ScenarioKind.parse(kind)
    baseline = PROPENSITY_WRONG if kind is ScenarioKind.MISSPEC_PROPENSITY else PROPENSITY_CORRECT
    outcome = OUTCOME_WRONG if kind is ScenarioKind.MISSPEC_OUTCOME else OUTCOME_CORRECT
    return ModelConfig(SelectionBiasSpec(0.0), BaselineMissingnessSpec(baseline),
                       CompleteCaseOutcomeSpec(outcome), IvDensitySpec(("z",), (IV_DESIGN,)))


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    n: int
    replications: int
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind.parse(self.kind))
        if self.n < 100:
            raise ValueError("n must be at least 100")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")


@dataclass
class ParameterSummary:
    truth: float
    mean: float
    bias: float
    mc_sd: float
    mean_se: float
    coverage: float
    used: int
    failed: int
    quartiles: tuple

    @classmethod
    def from_draws(cls, truth, points, ses, covered, failed):
        ok = np.isfinite(points)
        pts, s, cov = points[ok], ses[ok], covered[ok]
        if pts.size == 0:
            nan = float("nan")
            return cls(truth, nan, nan, nan, nan, nan, 0, failed, (nan, nan, nan))
        mean = float(pts.mean())
        return cls(truth, mean, mean - truth, float(pts.std(ddof=1)) if pts.size > 1 else 0.0,
                   float(np.nanmean(s)), float(np.mean(cov)), int(pts.size), failed,
                   tuple(float(q) for q in np.percentile(pts, [25, 50, 75])))

    @property
    def se_ratio(self) -> float:
        return self.mean_se / self.mc_sd if self.mc_sd > 0 else float("nan")


@dataclass
class SimulationReport:
    scenario: ScenarioSpec
    estimators: tuple
    summaries: dict                      # estimator -> {"phi": ParameterSummary, "zeta": ...}
    failures: dict                       # estimator -> count
    warnings: list = field(default_factory=list)
    draws: dict = field(default_factory=dict, repr=False)

    def summary(self, estimator, parameter) -> ParameterSummary:
        return self.summaries[EstimatorKind.parse(estimator).value][parameter]

    def to_dict(self, include_draws=False) -> dict:
        out = {
            "scenario": {"kind": self.scenario.kind.value, "n": self.scenario.n,
                         "replications": self.scenario.replications, "base_seed": self.scenario.base_seed},
            "truth": {"phi": PHI_TRUE, "zeta": ZETA_TRUE},
            "estimators": list(self.estimators),
            "summaries": {e: {p: asdict(s) for p, s in d.items()} for e, d in self.summaries.items()},
            "failures": dict(self.failures),
            "warnings": list(self.warnings),
        }
        if include_draws:
            out["draws"] = {e: {k: np.asarray(v).tolist() for k, v in d.items()} for e, d in self.draws.items()}
        return out


def _replicate(args):
    """Fit every estimator on one replicate; returns {estimator: row or None}."""
    spec, rep, estimators, opts = args
    data = generate_dataset(spec.n, spec.base_seed + rep).compressed()
    config = scenario_config(spec.kind)
    out = {}
    dr = None
    for name in estimators:
        kind = EstimatorKind.parse(name)
        try:
            if kind is EstimatorKind.IV_EFF:
                from .efficiency import estimate_efficient
                fit = estimate_efficient(data, config, opts=opts, dr=dr)
            else:
                fit = estimate(data, config, kind, opts=opts)
            if kind is EstimatorKind.IV_DR:
                dr = fit
            out[kind.value] = (fit.phi_hat, fit.se_phi,
                               np.nan if fit.zeta_hat is None else fit.zeta_hat, fit.se_zeta)
        except (MnarIvError, np.linalg.LinAlgError) as exc:
            log.info("replicate %d, %s failed: %s", rep, kind.value, exc)
            out[kind.value] = None
    return rep, out


def _covered(point, se, truth):
    lo, hi = point - 1.959964 * se, point + 1.959964 * se
    return (lo <= truth) & (truth <= hi)


def run_study(scenario: ScenarioSpec, estimators=("IV_IPW", "IV_OR", "IV_DR"),
              opts: SolveOptions | None = None, workers: int = 1) -> SimulationReport:
    """Replicate, estimate and summarise.  Failed fits are excluded and counted."""
    opts = opts or SolveOptions()
    names = tuple(EstimatorKind.parse(e).value for e in estimators)
    if "IV_EFF" in names and "IV_DR" not in names:
        # the efficient estimator starts from the DR fit
        names = tuple(n for n in names if n != "IV_EFF") + ("IV_DR", "IV_EFF")
        run_names = names
    else:
        run_names = tuple(sorted(names, key=lambda n: n == "IV_EFF"))
    R = scenario.replications
    slots = {e: np.full((R, 4), np.nan) for e in run_names}
    failed = {e: np.zeros(R, bool) for e in run_names}
    tasks = [(scenario, rep, run_names, opts) for rep in range(R)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_replicate, tasks, chunksize=max(1, R // (4 * workers))))
    else:
        results = map(_replicate, tasks)
    for rep, out in results:
        for e, row in out.items():
            if row is None:
                failed[e][rep] = True
            else:
                slots[e][rep] = row

    summaries, failures, warnings, draws = {}, {}, [], {}
    for e in run_names:
        a = slots[e]
        nf = int(failed[e].sum())
        failures[e] = nf
        good = ~failed[e]
        summaries[e] = {
            "phi": ParameterSummary.from_draws(PHI_TRUE, np.where(good, a[:, 0], np.nan), a[:, 1],
                                               _covered(a[:, 0], a[:, 1], PHI_TRUE), nf),
        }
        if np.any(np.isfinite(a[good, 2])):
            summaries[e]["zeta"] = ParameterSummary.from_draws(
                ZETA_TRUE, np.where(good, a[:, 2], np.nan), a[:, 3], _covered(a[:, 2], a[:, 3], ZETA_TRUE), nf)
        if nf > FAILURE_WARN_FRACTION * R:
            warnings.append(f"{e}: {nf} of {R} replicates failed (more than "
                            f"{FAILURE_WARN_FRACTION:.0%}); summaries exclude them")
        draws[e] = {"phi": a[:, 0], "se_phi": a[:, 1], "zeta": a[:, 2], "se_zeta": a[:, 3],
                    "failed": failed[e]}
    return SimulationReport(scenario, run_names, summaries, failures, warnings, draws)
