"""Generalized entropies used for calibration weighting.

Each entropy is a strictly convex function ``G`` on an open interval.  The
calibration machinery needs its derivative ``g``, the inverse ``f = g^{-1}``
(which is also the derivative of the convex conjugate ``F``), ``f'`` for the
dual Hessian and the regression weight ``1/g'(d)``.  All of them are closed
forms; nothing here inverts numerically.

Supported kinds and their CLI names::

    sq     squared loss              G = w^2/2                      (-inf, inf)
    el     empirical likelihood      G = -log w                     (0, inf)
    et     exponential tilting       G = w log w - w                (0, inf)
    set    shifted exp. tilting      G = (w-1)log(w-1) - w          (1, inf)
    ce     cross entropy             G = (w-1)log(w-1) - w log w    (1, inf)
    ph     pseudo-Huber (M > 0)      G = M^2 sqrt(1 + (w/M)^2)      (-inf, inf)
    hd     Hellinger                 G = -4 sqrt(w)                 (0, inf)
    inv    inverse                   G = 1/(2w)                     (0, inf)
    renyi  Renyi (r != 0, -1)        G = w^(r+1) / (r(r+1))         (0, inf)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DomainError, InvalidParams

INF = math.inf


class EntropyKind(enum.Enum):
    SquaredLoss = "sq"
    EmpiricalLikelihood = "el"
    ExponentialTilting = "et"
    ShiftedExpTilting = "set"
    CrossEntropy = "ce"
    PseudoHuber = "ph"
    Hellinger = "hd"
    Inverse = "inv"
    Renyi = "renyi"

    @property
    def code(self) -> int:
        """Integer tag used by the compiled kernels."""
        return _CODES[self]


_CODES = {kind: i for i, kind in enumerate(EntropyKind)}

# parameter names accepted per kind, in positional order
_PARAM_NAMES = {
    EntropyKind.PseudoHuber: ("M",),
    EntropyKind.Renyi: ("r",),
}


# --------------------------------------------------------------------------
# closed forms; ``p`` is the parameter tuple (M,) or (r,) or ()
# --------------------------------------------------------------------------

def _xlogx(w):
    return w * np.log(w)


def _G(kind, w, p):
    if kind is EntropyKind.SquaredLoss:
        return 0.5 * w * w
    if kind is EntropyKind.EmpiricalLikelihood:
        return -np.log(w)
    if kind is EntropyKind.ExponentialTilting:
        return _xlogx(w) - w
    if kind is EntropyKind.ShiftedExpTilting:
        return _xlogx(w - 1.0) - w
    if kind is EntropyKind.CrossEntropy:
        return _xlogx(w - 1.0) - _xlogx(w)
    if kind is EntropyKind.PseudoHuber:
        M = p[0]
        return M * M * np.sqrt(1.0 + (w / M) ** 2)
    if kind is EntropyKind.Hellinger:
        return -4.0 * np.sqrt(w)
    if kind is EntropyKind.Inverse:
        return 0.5 / w
    r = p[0]
    return w ** (r + 1.0) / (r * (r + 1.0))


def _g(kind, w, p):
    if kind is EntropyKind.SquaredLoss:
        return 1.0 * w
    if kind is EntropyKind.EmpiricalLikelihood:
        return -1.0 / w
    if kind is EntropyKind.ExponentialTilting:
        return np.log(w)
    if kind is EntropyKind.ShiftedExpTilting:
        return np.log(w - 1.0)
    if kind is EntropyKind.CrossEntropy:
        return np.log1p(-1.0 / w)
    if kind is EntropyKind.PseudoHuber:
        M = p[0]
        return w / np.sqrt(1.0 + (w / M) ** 2)
    if kind is EntropyKind.Hellinger:
        return -2.0 / np.sqrt(w)
    if kind is EntropyKind.Inverse:
        return -0.5 / (w * w)
    r = p[0]
    return w**r / r


def _gprime(kind, w, p):
    if kind is EntropyKind.SquaredLoss:
        return np.ones_like(w)
    if kind is EntropyKind.EmpiricalLikelihood:
        return 1.0 / (w * w)
    if kind is EntropyKind.ExponentialTilting:
        return 1.0 / w
    if kind is EntropyKind.ShiftedExpTilting:
        return 1.0 / (w - 1.0)
    if kind is EntropyKind.CrossEntropy:
        return 1.0 / (w * (w - 1.0))
    if kind is EntropyKind.PseudoHuber:
        M = p[0]
        return (1.0 + (w / M) ** 2) ** -1.5
    if kind is EntropyKind.Hellinger:
        return w**-1.5
    if kind is EntropyKind.Inverse:
        return w**-3.0
    r = p[0]
    return w ** (r - 1.0)


def _reg_weight(kind, w, p):
    """``1/g'(w)`` written out directly (Table-1 column), not as a reciprocal."""
    if kind is EntropyKind.SquaredLoss:
        return np.ones_like(w)
    if kind is EntropyKind.EmpiricalLikelihood:
        return w * w
    if kind is EntropyKind.ExponentialTilting:
        return 1.0 * w
    if kind is EntropyKind.ShiftedExpTilting:
        return w - 1.0
    if kind is EntropyKind.CrossEntropy:
        return w * w - w
    if kind is EntropyKind.PseudoHuber:
        M = p[0]
        return (1.0 + (w / M) ** 2) ** 1.5
    if kind is EntropyKind.Hellinger:
        return w**1.5
    if kind is EntropyKind.Inverse:
        return w**3.0
    r = p[0]
    return w ** (1.0 - r)


def _f(kind, u, p):
    if kind is EntropyKind.SquaredLoss:
        return 1.0 * u
    if kind is EntropyKind.EmpiricalLikelihood:
        return -1.0 / u
    if kind is EntropyKind.ExponentialTilting:
        return np.exp(u)
    if kind is EntropyKind.ShiftedExpTilting:
        return 1.0 + np.exp(u)
    if kind is EntropyKind.CrossEntropy:
        return -1.0 / np.expm1(u)
    if kind is EntropyKind.PseudoHuber:
        M = p[0]
        return u / np.sqrt(1.0 - (u / M) ** 2)
    if kind is EntropyKind.Hellinger:
        return 4.0 / (u * u)
    if kind is EntropyKind.Inverse:
        return 1.0 / np.sqrt(-2.0 * u)
    r = p[0]
    return (r * u) ** (1.0 / r)


def _fprime(kind, u, p):
    if kind is EntropyKind.SquaredLoss:
        return np.ones_like(u)
    if kind is EntropyKind.EmpiricalLikelihood:
        return 1.0 / (u * u)
    if kind is EntropyKind.ExponentialTilting:
        return np.exp(u)
    if kind is EntropyKind.ShiftedExpTilting:
        return np.exp(u)
    if kind is EntropyKind.CrossEntropy:
        em1 = np.expm1(u)
        return np.exp(u) / (em1 * em1)
    if kind is EntropyKind.PseudoHuber:
        M = p[0]
        return (1.0 - (u / M) ** 2) ** -1.5
    if kind is EntropyKind.Hellinger:
        return -8.0 / (u * u * u)
    if kind is EntropyKind.Inverse:
        return (-2.0 * u) ** -1.5
    r = p[0]
    return (r * u) ** (1.0 / r - 1.0)


def _F(kind, u, p):
    if kind is EntropyKind.SquaredLoss:
        return 0.5 * u * u
    if kind is EntropyKind.EmpiricalLikelihood:
        return -np.log(-u) - 1.0
    if kind is EntropyKind.ExponentialTilting:
        return np.exp(u)
    if kind is EntropyKind.ShiftedExpTilting:
        return u + 1.0 + np.exp(u)
    if kind is EntropyKind.CrossEntropy:
        return u - np.log(-np.expm1(u))
    if kind is EntropyKind.PseudoHuber:
        M = p[0]
        return -M * np.sqrt(M * M - u * u)
    if kind is EntropyKind.Hellinger:
        return -4.0 / u
    if kind is EntropyKind.Inverse:
        return -np.sqrt(-2.0 * u)
    r = p[0]
    return (r * u) ** ((r + 1.0) / r) / (r + 1.0)


def _domain(kind, p):
    if kind in (EntropyKind.SquaredLoss, EntropyKind.PseudoHuber):
        return -INF, INF
    if kind in (EntropyKind.ShiftedExpTilting, EntropyKind.CrossEntropy):
        return 1.0, INF
    return 0.0, INF


def _image(kind, p):
    """Open interval g(V), the set where f and F are defined."""
    if kind in (EntropyKind.SquaredLoss, EntropyKind.ExponentialTilting,
                EntropyKind.ShiftedExpTilting):
        return -INF, INF
    if kind is EntropyKind.PseudoHuber:
        return -p[0], p[0]
    if kind is EntropyKind.Renyi:
        return (0.0, INF) if p[0] > 0 else (-INF, 0.0)
    # EL, CE, Hellinger, Inverse
    return -INF, 0.0


@dataclass(frozen=True)
class EntropySpec:
    """A generalized entropy together with its derived functions.

    Build instances with :func:`make_entropy`.  The public methods validate
    their input against the relevant open interval and raise
    :class:`~gecal.errors.DomainError` at or beyond a boundary.
    """

    kind: EntropyKind
    params: tuple[float, ...]
    domain_lo: float
    domain_hi: float

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def image(self) -> tuple[float, float]:
        return _image(self.kind, self.params)

    @property
    def kernel_params(self) -> np.ndarray:
        """``[param, 0, scale]`` packed for the compiled kernels."""
        out = np.zeros(3)
        out[: len(self.params)] = self.params
        out[2] = 1.0
        return out

    def label(self) -> str:
        if not self.params:
            return self.name
        key = _PARAM_NAMES[self.kind][0]
        return f"{self.name}({key}={self.params[0]:g})"

    # -- validated evaluation -------------------------------------------------
    def _check(self, x, lo, hi, what):
        x = np.asarray(x, dtype=float)
        bad = ~((x > lo) & (x < hi))
        if np.any(bad):
            first = x[bad].flat[0] if x.ndim else float(x)
            raise DomainError(
                f"{what} for entropy {self.label()} requires a point in "
                f"({lo}, {hi}); got {first!r}"
            )
        return x

    def _primal(self, w):
        return self._check(w, self.domain_lo, self.domain_hi, "G/g/g'")

    def _dual(self, u):
        lo, hi = self.image
        return self._check(u, lo, hi, "f/F")

    def G(self, w):
        return _G(self.kind, self._primal(w), self.params)

    def g(self, w):
        return _g(self.kind, self._primal(w), self.params)

    def gprime(self, w):
        return _gprime(self.kind, self._primal(w), self.params)

    def reg_weight(self, w):
        """Regression weight ``1/g'(w)``."""
        return _reg_weight(self.kind, self._primal(w), self.params)

    def f(self, u):
        return _f(self.kind, self._dual(u), self.params)

    def fprime(self, u):
        return _fprime(self.kind, self._dual(u), self.params)

    def F(self, u):
        return _F(self.kind, self._dual(u), self.params)

    # -- unchecked evaluation for inner loops ---------------------------------
    def f_unchecked(self, u):
        return _f(self.kind, u, self.params)

    def fprime_unchecked(self, u):
        return _fprime(self.kind, u, self.params)

    def F_unchecked(self, u):
        return _F(self.kind, u, self.params)

    def in_image(self, u) -> np.ndarray:
        lo, hi = self.image
        u = np.asarray(u, dtype=float)
        return (u > lo) & (u < hi)

    def in_domain(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return (w > self.domain_lo) & (w < self.domain_hi)

    def scaled(self, factor: float) -> "ScaledEntropy":
        """Return ``factor * G`` (used to check argmin invariance)."""
        return ScaledEntropy(self, factor)


class ScaledEntropy:
    """Positive multiple ``c*G`` of an entropy.

    With ``G_c = c G`` one has ``g_c = c g``, ``f_c(u) = f(u/c)`` and
    ``F_c(u) = c F(u/c)``.  Only the pieces the solvers touch are provided.
    """

    def __init__(self, base: EntropySpec, factor: float):
        if not factor > 0:
            raise InvalidParams("scale factor must be positive")
        self.base = base
        self.factor = float(factor)
        self.kind = base.kind
        self.params = base.params
        self.domain_lo = base.domain_lo
        self.domain_hi = base.domain_hi

    @property
    def name(self):
        return self.base.name

    @property
    def kernel_params(self):
        out = self.base.kernel_params
        out[2] = self.factor
        return out

    def label(self):
        return f"{self.factor:g}*{self.base.label()}"

    @property
    def image(self):
        lo, hi = self.base.image
        return lo * self.factor, hi * self.factor

    def G(self, w):
        return self.factor * self.base.G(w)

    def g(self, w):
        return self.factor * self.base.g(w)

    def gprime(self, w):
        return self.factor * self.base.gprime(w)

    def reg_weight(self, w):
        return self.base.reg_weight(w) / self.factor

    def f_unchecked(self, u):
        return self.base.f_unchecked(np.asarray(u) / self.factor)

    def fprime_unchecked(self, u):
        return self.base.fprime_unchecked(np.asarray(u) / self.factor) / self.factor

    def F_unchecked(self, u):
        return self.factor * self.base.F_unchecked(np.asarray(u) / self.factor)

    def f(self, u):
        return self.base.f(np.asarray(u) / self.factor)

    def F(self, u):
        return self.factor * self.base.F(np.asarray(u) / self.factor)

    def in_image(self, u):
        return self.base.in_image(np.asarray(u) / self.factor)

    def in_domain(self, w):
        return self.base.in_domain(w)


def _coerce_kind(kind) -> EntropyKind:
    if isinstance(kind, EntropyKind):
        return kind
    if isinstance(kind, str):
        key = kind.strip()
        for k in EntropyKind:
            if key.lower() == k.value or key == k.name:
                return k
    raise InvalidParams(f"unknown entropy kind {kind!r}")


def make_entropy(kind, params: Sequence[float] | Mapping[str, float] = ()) -> EntropySpec:
    """Build an :class:`EntropySpec`.

    Parameters
    ----------
    kind : EntropyKind or str
        Enum member, enum name (``"CrossEntropy"``) or CLI name (``"ce"``).
    params : sequence or mapping
        ``[M]`` / ``{"M": M}`` for pseudo-Huber, ``[r]`` / ``{"r": r}`` for
        Renyi, empty otherwise.

    Raises
    ------
    InvalidParams
        On missing, extraneous or out-of-range parameters.
    """
    kind = _coerce_kind(kind)
    names = _PARAM_NAMES.get(kind, ())
    if isinstance(params, Mapping):
        extra = set(params) - set(names)
        if extra:
            raise InvalidParams(f"{kind.value}: unexpected parameter(s) {sorted(extra)}")
        missing = [k for k in names if k not in params]
        if missing:
            raise InvalidParams(f"{kind.value}: missing parameter(s) {missing}")
        values = tuple(float(params[k]) for k in names)
    else:
        values = tuple(float(v) for v in params)
        if len(values) != len(names):
            raise InvalidParams(
                f"{kind.value} takes {len(names)} parameter(s) {list(names)}, got {len(values)}"
            )
    if any(not math.isfinite(v) for v in values):
        raise InvalidParams(f"{kind.value}: parameters must be finite")
    if kind is EntropyKind.PseudoHuber and not values[0] > 0:
        raise InvalidParams("pseudo-Huber requires M > 0")
    if kind is EntropyKind.Renyi and values[0] in (0.0, -1.0):
        raise InvalidParams("Renyi entropy requires r not in {0, -1}")
    lo, hi = _domain(kind, values)
    return EntropySpec(kind, values, lo, hi)


_WHICH: dict[str, Callable] = {
    "G": EntropySpec.G,
    "g": EntropySpec.g,
    "gprime": EntropySpec.gprime,
    "f": EntropySpec.f,
    "fprime": EntropySpec.fprime,
    "F": EntropySpec.F,
}


def evaluate(spec: EntropySpec, which: str, point):
    """Evaluate one of ``G, g, gprime, f, fprime, F`` at ``point``."""
    try:
        fn = _WHICH[which]
    except KeyError:
        raise ValueError(f"which must be one of {sorted(_WHICH)}") from None
    out = fn(spec, point)
    return float(out) if np.ndim(out) == 0 else out


def debias_covariate(spec: EntropySpec, d):
    """Debiasing covariate ``g(d)`` and regression weight ``1/g'(d)``."""
    return spec.g(d), spec.reg_weight(d)


def parse_entropy(name: str, assignments: Sequence[str] = ()) -> EntropySpec:
    """Build a spec from a CLI name and ``key=value`` strings."""
    params = {}
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidParams(f"entropy parameter {item!r} is not key=value")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise InvalidParams(f"entropy parameter {item!r} is not numeric") from None
    return make_entropy(name, params)


ALL_KINDS = tuple(EntropyKind)
