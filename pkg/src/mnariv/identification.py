"""Identification in the binary instrument, binary outcome case without covariates.

The full law is ``P(z) P(y) P(R=1 | z, y)`` with
``logit P(R=1 | z, y) = t0 + t1 z + t2 y + t3 z y`` and ``P(Y=1) = exp(xi)``.
Only ``P(z, y, R=1)`` and ``P(z, R=0)`` are observed.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import OutOfParameterSpace
from .model import expit


@dataclass(frozen=True)
class BinaryFullLaw:
    theta: tuple
    xi: float
    pz: float = 0.5

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        if len(theta) != 4:
            raise ValueError("theta has four entries (t0, t1, t2, t3)")
        object.__setattr__(self, "theta", theta)
        if not self.xi < 0:
            raise OutOfParameterSpace(f"P(Y=1) = exp(xi) needs xi < 0, got {self.xi}")
        if not 0 < self.pz < 1:
            raise OutOfParameterSpace("pz must lie in (0, 1)")

    @property
    def p_y1(self) -> float:
        return math.exp(self.xi)

    def propensity(self, z, y) -> float:
        t0, t1, t2, t3 = self.theta
        return float(expit(t0 + t1 * z + t2 * y + t3 * z * y))

    def cells(self) -> dict:
        """Joint probabilities of (z, y, r)."""
        out = {}
        for z, y, r in itertools.product((0, 1), repeat=3):
            pz = self.pz if z else 1 - self.pz
            py = self.p_y1 if y else 1 - self.p_y1
            pr = self.propensity(z, y)
            out[(z, y, r)] = pz * py * (pr if r else 1 - pr)
        return out

    def as_tuple(self) -> tuple:
        return self.theta + (self.xi,)


@dataclass(frozen=True)
class ObservedLaw:
    observed: np.ndarray     # [z, y] -> P(z, y, R=1)
    missing: np.ndarray      # [z] -> P(z, R=0)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.observed), np.ravel(self.missing)])

    def distance(self, other: "ObservedLaw") -> float:
        return float(np.max(np.abs(self.as_vector() - other.as_vector())))


def observed_law(full: BinaryFullLaw) -> ObservedLaw:
    """Marginalise the full law to what is observable."""
    obs = np.empty((2, 2))
    mis = np.zeros(2)
    for z, y in itertools.product((0, 1), repeat=2):
        pz = full.pz if z else 1 - full.pz
        py = full.p_y1 if y else 1 - full.p_y1
        pr = full.propensity(z, y)
        obs[z, y] = pz * py * pr
        mis[z] += pz * py * (1 - pr)
    return ObservedLaw(obs, mis)


def rho1_for(xi: float, rho0: float) -> float:
    """Second tilt coefficient forced by rho0 so that P(Y) stays a distribution."""
    arg = math.exp(-rho0 - xi) + (math.exp(xi) - 1.0) / math.exp(xi)
    if arg <= 0:
        raise OutOfParameterSpace(f"rho0={rho0} leaves no valid outcome law")
    return math.log(arg)


def _alphas(theta, rho0, rho1):
    t0, t1, t2, t3 = theta
    lin = (t0, t0 + t1, t0 + t2, t0 + t1 + t2 + t3)
    shift = (rho0, rho0, rho0 + rho1, rho0 + rho1)
    return tuple(1.0 + math.exp(a) - math.exp(a - s) for a, s in zip(lin, shift))


def construct_equivalent_law(full: BinaryFullLaw, rho0: float) -> BinaryFullLaw:
    """A different saturated law with the same observed law.

    The outcome law is tilted by ``exp(rho0 + rho1 y)`` and the propensity
    reparametrised to compensate exactly.
    """
    rho0 = float(rho0)
    if rho0 == 0.0:
        return full
    rho1 = rho1_for(full.xi, rho0)
    a = _alphas(full.theta, rho0, rho1)
    if min(a) <= 0:
        raise OutOfParameterSpace(f"rho0={rho0}: propensity would leave (0, 1)")
    l0, l1, l2, l3 = (math.log(v) for v in a)
    t0, t1, t2, t3 = full.theta
    theta = (t0 - rho0 - l0, t1 + l0 - l1, t2 - rho1 + l0 - l2, t3 + l1 + l2 - l0 - l3)
    xi = full.xi + rho0 + rho1
    if xi >= 0:
        raise OutOfParameterSpace(f"rho0={rho0}: tilted P(Y=1) would reach 1")
    return BinaryFullLaw(theta, xi, full.pz)


@dataclass
class ProbeEntry:
    rho0: float
    rho1: float | None
    lhs: float | None
    rhs: float | None
    violation: float | None
    theta3_tilde: float | None
    note: str = ""


@dataclass
class ProbeReport:
    law: BinaryFullLaw
    entries: list = field(default_factory=list)
    tolerance: float = 1e-10

    @property
    def all_violated(self) -> bool:
        """True when no nonzero rho0 satisfies the no-interaction constraint."""
        return all(e.violation is None or e.violation > self.tolerance
                   for e in self.entries if e.rho0 != 0)

    def to_dict(self) -> dict:
        return {
            "theta": list(self.law.theta), "xi": self.law.xi, "pz": self.law.pz,
            "tolerance": self.tolerance, "all_violated": self.all_violated,
            "entries": [vars(e) for e in self.entries],
        }


DEFAULT_RHO_GRID = (-0.3, -0.1, -0.05, 0.05, 0.1, 0.3)


def probe_no_interaction_identifiability(full: BinaryFullLaw, rho_grid=DEFAULT_RHO_GRID,
                                         tolerance: float = 1e-10) -> ProbeReport:
    """Check whether any tilt keeps the propensity free of a z-y interaction.

    For each rho0 the equivalent law would need ``exp(rho0 + rho1)`` to equal
    ``exp(t2 + rho0) / (exp(t2 + rho0) + 1 - exp(rho0))``; the report holds
    the gap between the two sides and the interaction the tilt would induce.
    """
    if full.theta[3] != 0:
        raise ValueError("the probe needs a law without z-y interaction (t3 = 0)")
    t2 = full.theta[2]
    report = ProbeReport(full, tolerance=tolerance)
    for rho0 in rho_grid:
        rho0 = float(rho0)
        try:
            rho1 = rho1_for(full.xi, rho0)
        except OutOfParameterSpace as exc:
            report.entries.append(ProbeEntry(rho0, None, None, None, None, None, str(exc)))
            continue
        lhs = math.exp(rho0 + rho1)
        rhs = math.exp(t2 + rho0) / (math.exp(t2 + rho0) + 1.0 - math.exp(rho0))
        try:
            t3 = construct_equivalent_law(full, rho0).theta[3]
            note = ""
        except OutOfParameterSpace as exc:
            t3, note = None, str(exc)
        report.entries.append(ProbeEntry(rho0, rho1, lhs, rhs, abs(lhs - rhs), t3, note))
    return report


@dataclass
class GridSearchResult:
    n_laws: int
    close_pairs: list
    threshold: float

    @property
    def identified(self) -> bool:
        return not self.close_pairs


def search_no_interaction_equivalents(step: float = 0.25, bound: float = 2.0,
                                      xi_range=(-2.0, -0.05), pz: float = 0.5,
                                      threshold: float = 1e-6) -> GridSearchResult:
    """Exhaustive grid of no-interaction laws; returns pairs with near-identical observed laws.

    The grid covers (t0, t1, t2) on [-bound, bound] with the given step and
    xi from ``xi_range[0]`` to ``xi_range[1]`` (endpoint included).  Laws
    with t1 = 0 violate instrument relevance and are left out.
    """
    ticks = np.round(np.arange(-bound, bound + step / 2, step), 12)
    xis = np.arange(xi_range[0], xi_range[1], step)
    xis = np.unique(np.round(np.append(xis, xi_range[1]), 12))
    params, vectors = [], []
    for t0, t1, t2 in itertools.product(ticks, repeat=3):
        if t1 == 0:
            continue
        for xi in xis:
            law = BinaryFullLaw((t0, t1, t2, 0.0), float(xi), pz)
            params.append(law.as_tuple())
            vectors.append(observed_law(law).as_vector())
    tree = cKDTree(np.array(vectors))
    pairs = tree.query_pairs(threshold, p=np.inf, output_type="ndarray")
    close = [(params[i], params[j]) for i, j in pairs if params[i] != params[j]]
    return GridSearchResult(len(params), close, threshold)


EXAMPLE_LAW = BinaryFullLaw((0.3, 0.6, 0.1, 0.7), -0.2, 0.5)
EXAMPLE_RHO0 = 0.3
EXAMPLE_NO_INTERACTION = BinaryFullLaw((0.3, 0.6, 0.1, 0.0), -0.2, 0.5)


def identification_report() -> dict:
    """Default report: the saturated counterexample and both no-interaction checks."""
    tilde = construct_equivalent_law(EXAMPLE_LAW, EXAMPLE_RHO0)
    probe = probe_no_interaction_identifiability(EXAMPLE_NO_INTERACTION)
    search = search_no_interaction_equivalents()
    return {
        "saturated_example": {
            "input": list(EXAMPLE_LAW.as_tuple()),
            "rho0": EXAMPLE_RHO0,
            "rho1": rho1_for(EXAMPLE_LAW.xi, EXAMPLE_RHO0),
            "equivalent": list(tilde.as_tuple()),
            "observed_law_distance": observed_law(EXAMPLE_LAW).distance(observed_law(tilde)),
        },
        "no_interaction_probe": probe.to_dict(),
        "no_interaction_grid_search": {"laws": search.n_laws, "threshold": search.threshold,
                                       "close_pairs": [list(map(list, p)) for p in search.close_pairs],
                                       "identified": search.identified},
    }
