"""Observation and Dataset containers.

A :class:`Dataset` stores its columns as numpy arrays.  The outcome column
holds ``nan`` wherever ``r == 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConsistencyError, InsufficientData, SchemaError


@dataclass(frozen=True)
class Observation:
    x: tuple[float, ...]
    z: tuple[float, ...]
    r: int
    y: float | None = None

    def __post_init__(self):
        if self.r not in (0, 1):
            raise ConsistencyError(f"response indicator must be 0 or 1, got {self.r!r}")
        if len(self.z) < 1:
            raise SchemaError("an observation needs at least one instrument value")
        if (self.r == 1) != (self.y is not None):
            raise ConsistencyError("outcome must be present exactly when r == 1")


class Dataset:
    """Rows of (covariates, instruments, response indicator, outcome).

    Parameters
    ----------
    x : array_like, shape (n, p)
        Covariates.  ``p`` may be zero.
    z : array_like, shape (n, k)
        Instruments, ``k >= 1``.
    r : array_like of {0, 1}, shape (n,)
    y : array_like, shape (n,)
        Outcome; entries with ``r == 0`` are ignored and stored as ``nan``.
    covariate_names, instrument_names : sequence of str
    weights : array_like, shape (n,), optional
        Positive frequency weights.  A weighted dataset stands for the
        expanded one in which row ``i`` occurs ``weights[i]`` times; see
        :meth:`compressed`.
    """

    outcome_name = "y"
    indicator_name = "r"

    def __init__(self, x, z, r, y, covariate_names: Sequence[str] | None = None,
                 instrument_names: Sequence[str] | None = None, weights=None):
        r = np.asarray(r)
        n = r.shape[0]
        x = np.asarray(x, dtype=float).reshape(n, -1)
        z = np.asarray(z, dtype=float).reshape(n, -1)
        y = np.asarray(y, dtype=float).reshape(n)
        if n == 0:
            raise InsufficientData("dataset has no observations")
        if z.shape[1] < 1:
            raise SchemaError("at least one instrument column is required")
        if not np.all((r == 0) | (r == 1)):
            raise ConsistencyError("response indicator must be 0 or 1")
        r = r.astype(float)
        missing_y = np.isnan(y)
        bad = np.flatnonzero((r == 1) & missing_y)
        if bad.size:
            raise ConsistencyError("r == 1 with missing outcome", row=int(bad[0]))
        if covariate_names is None:
            covariate_names = [f"x{j + 1}" for j in range(x.shape[1])]
        if instrument_names is None:
            instrument_names = ["z"] if z.shape[1] == 1 else [f"z{j + 1}" for j in range(z.shape[1])]
        covariate_names = tuple(covariate_names)
        instrument_names = tuple(instrument_names)
        if len(covariate_names) != x.shape[1] or len(instrument_names) != z.shape[1]:
            raise SchemaError("column names do not match array widths")
        names = covariate_names + instrument_names
        if len(set(names)) != len(names) or {"r", "y"} & set(names):
            raise SchemaError(f"column names must be distinct and avoid 'r'/'y': {names}")

        self.x = x
        self.z = z
        self.r = r
        self.y = np.where(r == 1, y, np.nan)
        self.y_filled = np.where(r == 1, y, 0.0)
        self.covariate_names = covariate_names
        self.instrument_names = instrument_names
        for arr in (self.x, self.z, self.r, self.y, self.y_filled):
            arr.setflags(write=False)
        self._columns = {name: self.x[:, j] for j, name in enumerate(covariate_names)}
        self._columns.update({name: self.z[:, j] for j, name in enumerate(instrument_names)})
        self._design_cache: dict = {}
        if weights is None:
            self.weights = None
            self.total = float(n)
        else:
            weights = np.asarray(weights, dtype=float).reshape(n)
            if not np.all(weights > 0):
                raise ConsistencyError("frequency weights must be positive")
            weights.setflags(write=False)
            self.weights = weights
            self.total = float(weights.sum())

    # construction helpers
    @classmethod
    def from_observations(cls, observations: Iterable[Observation],
                          covariate_names=None, instrument_names=None) -> "Dataset":
        obs = list(observations)
        if not obs:
            raise InsufficientData("dataset has no observations")
        p, k = len(obs[0].x), len(obs[0].z)
        for o in obs:
            if len(o.x) != p or len(o.z) != k:
                raise SchemaError("covariate and instrument lengths must be constant")
        x = np.array([o.x for o in obs], dtype=float).reshape(len(obs), p)
        z = np.array([o.z for o in obs], dtype=float).reshape(len(obs), k)
        r = np.array([o.r for o in obs])
        y = np.array([np.nan if o.y is None else o.y for o in obs], dtype=float)
        return cls(x, z, r, y, covariate_names, instrument_names)

    @classmethod
    def from_columns(cls, columns: Mapping[str, Sequence[float]], covariates: Sequence[str],
                     instruments: Sequence[str], indicator: str = "r", outcome: str = "y") -> "Dataset":
        n = len(columns[indicator])
        x = np.column_stack([columns[c] for c in covariates]) if covariates else np.empty((n, 0))
        z = np.column_stack([columns[c] for c in instruments])
        return cls(x, z, columns[indicator], columns[outcome], covariates, instruments)

    # access
    @property
    def n(self) -> int:
        return self.r.shape[0]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield self[i]

    def __getitem__(self, i: int) -> Observation:
        ri = int(self.r[i])
        return Observation(tuple(self.x[i]), tuple(self.z[i]), ri, float(self.y[i]) if ri else None)

    @property
    def observations(self) -> list[Observation]:
        return list(self)

    @property
    def columns(self) -> Mapping[str, np.ndarray]:
        return self._columns

    @property
    def n_observed(self) -> int:
        if self.weights is None:
            return int(self.r.sum())
        return int(round(float(self.weights @ self.r)))

    @property
    def fully_observed(self) -> bool:
        return bool(np.all(self.r == 1))

    def average(self, values) -> np.ndarray:
        """Sample mean over rows (axis 0), honouring frequency weights."""
        values = np.asarray(values, dtype=float)
        if self.weights is None:
            return values.mean(axis=0)
        return self.weights @ values / self.total

    def average_weights(self, values) -> np.ndarray:
        """Per-row multipliers turning a row sum into the sample average."""
        values = np.asarray(values, dtype=float)
        if self.weights is None:
            return values / self.n
        return values * self.weights / self.total

    def compressed(self) -> "Dataset":
        """Equivalent weighted dataset with one row per distinct observation."""
        table = np.column_stack([self.x, self.z, self.r, self.y_filled])
        uniq, inverse = np.unique(table, axis=0, return_inverse=True)
        w = np.ones(self.n) if self.weights is None else self.weights
        counts = np.bincount(inverse.ravel(), weights=w, minlength=uniq.shape[0])
        p, k = self.x.shape[1], self.z.shape[1]
        r = uniq[:, p + k]
        y = np.where(r == 1, uniq[:, p + k + 1], np.nan)
        return Dataset(uniq[:, :p], uniq[:, p:p + k], r, y, self.covariate_names,
                       self.instrument_names, weights=counts)

    def require_mnar_ready(self):
        if self.n_observed == 0 or self.fully_observed:
            raise InsufficientData(
                "MNAR estimation needs at least one observed and one missing outcome")

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.x[index], self.z[index], self.r[index], self.y[index],
                       self.covariate_names, self.instrument_names,
                       None if self.weights is None else self.weights[index])

    def with_columns(self, **updates) -> "Dataset":
        """Copy with some covariate/instrument columns replaced."""
        x = self.x.copy()
        z = self.z.copy()
        for name, values in updates.items():
            if name in self.covariate_names:
                x[:, self.covariate_names.index(name)] = values
            elif name in self.instrument_names:
                z[:, self.instrument_names.index(name)] = values
            else:
                raise SchemaError(f"unknown column {name!r}")
        return Dataset(x, z, self.r, self.y, self.covariate_names, self.instrument_names, self.weights)

    def design_matrix(self, design, overrides: tuple = ()) -> np.ndarray:
        """Cached design matrix; ``overrides`` pins named columns to constants."""
        key = (design.terms, overrides)
        out = self._design_cache.get(key)
        if out is None:
            cols = self._columns
            if overrides:
                cols = dict(cols)
                for name, value in overrides:
                    cols[name] = np.full(self.n, float(value))
            out = design.matrix(cols, n=self.n)
            out.setflags(write=False)
            self._design_cache[key] = out
        return out

    def __repr__(self):
        return (f"Dataset(n={self.total:g}, observed={self.n_observed}, "
                f"covariates={list(self.covariate_names)}, instruments={list(self.instrument_names)})")
