"""Synthetic finite populations, Poisson sampling and design quantities.

Random streams
--------------
Every random draw comes from a ``numpy.random.Generator`` over PCG64 seeded by
a ``SeedSequence`` built from the user seed plus a spawn key:

* population: ``SeedSequence(seed, spawn_key=(0,))``
* replication ``r``: ``SeedSequence(seed, spawn_key=(1, r))``
* redraw ``k`` of replication ``r`` after an empty sample:
  ``SeedSequence(seed, spawn_key=(1, r, k))``

so replications are independent of each other and of execution order.
Unit indices are 0-based throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptySample, InputError

PI_CAP = 0.7


class Model(enum.Enum):
    Model1 = "model1"
    Model2 = "model2"

    @classmethod
    def parse(cls, value) -> "Model":
        if isinstance(value, Model):
            return value
        key = str(value).strip().lower().replace("_", "")
        for m in cls:
            if key in (m.value, m.value[-1]):
                return m
        raise InputError(f"unknown model {value!r}; expected model1 or model2")


class Scheme(enum.Enum):
    Poisson = "poisson"


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``key`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def t3_cdf(x):
    """CDF of Student's t with 3 degrees of freedom (closed form)."""
    x = np.asarray(x, dtype=float)
    s = x / math.sqrt(3.0)
    return 0.5 + (s / (1.0 + s * s) + np.arctan(s)) / math.pi


@dataclass
class Population:
    """A finite population with its first-order inclusion probabilities."""

    x: np.ndarray
    y: np.ndarray
    pi: np.ndarray
    z_latent: Optional[np.ndarray] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float).reshape(self.y.shape[0], -1)
        self.pi = np.asarray(self.pi, dtype=float)
        if self.N < 1:
            raise InputError("population must have at least one unit")
        if self.pi.shape != (self.N,) or self.y.shape != (self.N,):
            raise InputError("x, y and pi must have matching lengths")
        if not np.all((self.pi > 0) & (self.pi <= 1)):
            raise InputError("inclusion probabilities must lie in (0, 1]")
        if not np.all(np.isfinite(self.x)):
            raise InputError("covariates must be finite")

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> np.ndarray:
        return 1.0 / self.pi

    @property
    def design(self) -> "DesignInfo":
        return DesignInfo(self.pi)

    def mean_y(self) -> float:
        return float(self.y.mean())


@dataclass
class SampleData:
    """A realized sample: indicators, indices and the sampled rows."""

    indices: np.ndarray
    delta: np.ndarray
    x_s: np.ndarray
    y_s: np.ndarray
    pi_s: np.ndarray
    N: int
    d: np.ndarray = field(init=False)

    def __post_init__(self):
        self.d = 1.0 / self.pi_s

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def design(self) -> "DesignInfo":
        return DesignInfo(self.pi_s)

    @classmethod
    def from_arrays(cls, x, y, pi, N=None, indices=None):
        """Wrap already-sampled rows (e.g. read from a file)."""
        pi = np.asarray(pi, dtype=float)
        n = pi.shape[0]
        x = np.asarray(x, dtype=float).reshape(n, -1)
        y = np.zeros(n) if y is None else np.asarray(y, dtype=float)
        idx = np.arange(n) if indices is None else np.asarray(indices)
        N = n if N is None else int(N)
        delta = np.zeros(max(N, n), dtype=np.int8)
        if indices is not None and np.issubdtype(idx.dtype, np.integer) and idx.max(initial=-1) < N:
            delta[idx] = 1
        return cls(idx, delta, x, y, pi, N)


@dataclass(frozen=True)
class DesignInfo:
    """Poisson design: ``pi_ij = pi_i pi_j`` off the diagonal, ``pi_i`` on it."""

    pi: np.ndarray
    scheme: Scheme = Scheme.Poisson

    def joint_inclusion(self, i: int, j: int) -> float:
        n = self.pi.shape[0]
        for k in (i, j):
            if not 0 <= k < n:
                raise IndexError(f"unit index {k} out of range [0, {n})")
        if i == j:
            return float(self.pi[i])
        return float(self.pi[i] * self.pi[j])

    def joint_matrix(self) -> np.ndarray:
        pij = np.outer(self.pi, self.pi)
        np.fill_diagonal(pij, self.pi)
        return pij


def joint_inclusion(design: DesignInfo, i: int, j: int) -> float:
    """Second-order inclusion probability (0-based indices)."""
    return design.joint_inclusion(i, j)


def generate_population(model, N: int, seed: int) -> Population:
    """Draw the two-covariate simulation population.

    ``x1 ~ N(2, 1)``, ``x2 ~ U(0, 4)``, ``z ~ N(0, 1)``, ``e ~ N(0, 1)``,
    ``y = x1 + x2 + z + e`` (Model1) or ``x1 + x2 + z^2 + e`` (Model2) and
    ``pi = min(T3(-z - 2), 0.7)`` with ``T3`` the t(3) CDF.
    """
    model = Model.parse(model)
    N = int(N)
    if N < 2:
        raise InputError("population size N must be at least 2")
    rng = stream(seed, 0)
    x1 = rng.normal(2.0, 1.0, N)
    x2 = rng.uniform(0.0, 4.0, N)
    z = rng.normal(0.0, 1.0, N)
    e = rng.normal(0.0, 1.0, N)
    if model is Model.Model1:
        y = x1 + x2 + z + e
    else:
        y = x1 + x2 + z * z + e
    pi = np.minimum(t3_cdf(-z - 2.0), PI_CAP)
    return Population(np.column_stack([x1, x2]), y, pi, z_latent=z)


def draw_poisson_sample(pop: Population, seed=None, rng=None) -> SampleData:
    """Independent Bernoulli(pi_i) selection.

    Pass either an integer ``seed`` or a ready ``rng``.  Raises
    ``EmptySample`` when nothing is selected.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))
    delta = (rng.random(pop.N) < pop.pi).astype(np.int8)
    idx = np.flatnonzero(delta)
    if idx.size == 0:
        raise EmptySample("Poisson draw selected no units")
    return SampleData(idx, delta, pop.x[idx], pop.y[idx], pop.pi[idx], pop.N)

