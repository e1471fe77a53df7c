"""Calibration when the population total of ``g(d)`` is unknown.

Two routes are offered.  The adjusted-entropy program treats the debiasing
total as ``N * alpha`` with ``alpha`` free and adds ``N K(alpha)`` to the
entropy; the optimal ``alpha`` solves ``k(alpha) = lambda_2(alpha)``.  The
kernel route estimates ``alpha`` by a Nadaraya-Watson fit of ``g(d)`` on
``x`` averaged over the population.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .calibration import CalibrationProblem, CalibrationResult, Mode, solve_gec, solve_pinned
from .errors import BracketFailure, CalibrationError, DomainError, EmptyNeighborhood

ROOT_TOL = 1e-8
MAX_OUTER = 200


class KKind(enum.Enum):
    K1_Identity = "k1"
    K2_QinShrink = "k2"


@dataclass(frozen=True)
class KSpec:
    """Penalty ``K(alpha)``: K1 is ``alpha``; K2 is ``(a_HT + 1) log|alpha + 1|``."""

    kind: KKind
    alpha_ht: float = 0.0


def make_kspec(kind, d, entropy, N) -> KSpec:
    """KSpec with ``alpha_ht = N^-1 sum_A d_i g(d_i)``."""
    kind = kind if isinstance(kind, KKind) else KKind(str(kind).lower())
    d = np.asarray(d, dtype=float)
    return KSpec(kind, float(d @ entropy.g(d)) / N)


def k_eval(spec: KSpec, alpha: float):
    """Return ``(K, k, k')`` at ``alpha``."""
    if spec.kind is KKind.K1_Identity:
        return float(alpha), 1.0, 0.0
    s = alpha + 1.0
    if s == 0.0 or not math.isfinite(s):
        raise DomainError("K2 is undefined at alpha = -1")
    c = spec.alpha_ht + 1.0
    return c * math.log(abs(s)), c / s, -c / (s * s)


@dataclass
class AdjustedResult:
    result: CalibrationResult
    alpha_hat: float
    outer_iterations: int
    bracket: tuple
    trace: list = field(default_factory=list, repr=False)

    @property
    def omega(self):
        return self.result.omega


def _population_size(problem, N):
    if N is not None:
        return float(N)
    ones = np.all(problem.x == 1.0, axis=0)
    if not np.any(ones):
        raise ValueError("N is needed when x has no intercept column")
    return float(problem.x_totals[np.flatnonzero(ones)[0]])


def solve_adjusted(problem: CalibrationProblem, kspec: KSpec, N=None, shortcut=True,
                   tol: float = ROOT_TOL) -> AdjustedResult:
    """Adjusted-entropy calibration.

    For K1 with ``shortcut`` the debiasing multiplier is pinned at 1 and only
    the benchmark multipliers are solved.  Otherwise a safeguarded root find
    of ``h(alpha) = k(alpha) - lambda_2(alpha)`` runs over inner calibrations
    with debiasing total ``N alpha``.
    """
    N = _population_size(problem, N)
    ent = problem.entropy
    d = problem.d
    gd = ent.g(d)
    if kspec.kind is KKind.K1_Identity and shortcut:
        res = solve_pinned(problem.x, d, problem.x_totals, ent)
        res.lam = np.append(res.lam, 1.0)
        res.mode = Mode.GecKnown.value
        alpha = float(res.omega @ gd) / N
        return AdjustedResult(res, alpha, 0, (alpha, alpha))

    trace = []
    warm = [None]

    def h(alpha):
        prob = replace(problem, mode=Mode.GecKnown, debias_total=N * alpha, costs=None)
        res = solve_gec(prob, lam0=warm[0])
        warm[0] = res.lam
        lam2 = float(res.lam[-1])
        trace.append((alpha, lam2))
        return k_eval(kspec, alpha)[1] - lam2, res

    alpha0 = float(d @ gd) / N
    # K2 must stay on one side of alpha = -1
    wall_lo, wall_hi = -math.inf, math.inf
    if kspec.kind is KKind.K2_QinShrink:
        if alpha0 > -1:
            wall_lo = -1.0
        else:
            wall_hi = -1.0
    h0, r0 = h(alpha0)
    if abs(h0) <= tol:
        return AdjustedResult(r0, alpha0, 1, (alpha0, alpha0), trace)

    direction = 1.0 if h0 > 0 else -1.0
    good_a, good_h, good_r = alpha0, h0, r0
    step = 1e-3 * (1.0 + abs(alpha0))
    evals = 1
    other = None
    while evals < MAX_OUTER:
        trial = good_a + direction * step
        if trial <= wall_lo or trial >= wall_hi:
            wall = wall_lo if direction < 0 else wall_hi
            trial = 0.5 * (good_a + wall)
        evals += 1
        try:
            ht, rt = h(trial)
        except (CalibrationError, DomainError):
            step = 0.5 * abs(trial - good_a)
            if step < 1e-14 * (1 + abs(good_a)):
                break
            continue
        if abs(ht) <= tol:
            return AdjustedResult(rt, trial, evals, (min(good_a, trial), max(good_a, trial)), trace)
        if np.sign(ht) != np.sign(good_h):
            other = (trial, ht, rt)
            break
        # overshoot the secant root so the next trial likely brackets it
        reach = abs(ht * (trial - good_a) / (good_h - ht)) if good_h != ht else 0.0
        good_a, good_h, good_r = trial, ht, rt
        step = max(2.0 * step, 1.5 * reach) if math.isfinite(reach) else 2.0 * step
    if other is None:
        raise BracketFailure(f"no sign change of k - lambda_2 found from alpha = {alpha0:.6g}")

    # order so that h(lo) > 0 > h(hi)
    pts = sorted([(good_a, good_h, good_r), other], key=lambda t: t[0])
    (a_lo, h_lo, _), (a_hi, h_hi, _) = pts
    bracket = (a_lo, a_hi)
    best = min(pts, key=lambda t: abs(t[1]))
    stall = 0
    while evals < MAX_OUTER:
        # secant step; bisect when it hugs an end or the bracket stops halving
        width = a_hi - a_lo
        a_new = a_lo - h_lo * width / (h_hi - h_lo)
        if stall >= 2 or not (a_lo + 0.01 * width < a_new < a_hi - 0.01 * width):
            a_new = 0.5 * (a_lo + a_hi)
            stall = 0
        evals += 1
        try:
            hn, rn = h(a_new)
        except (CalibrationError, DomainError) as exc:
            raise CalibrationError(f"inner solve failed inside the bracket: {exc}") from exc
        if abs(hn) < abs(best[1]):
            best = (a_new, hn, rn)
        if abs(hn) <= tol:
            break
        if hn > 0:
            a_lo, h_lo = a_new, hn
        else:
            a_hi, h_hi = a_new, hn
        stall = stall + 1 if a_hi - a_lo > 0.5 * width else 0
        if a_hi - a_lo <= 4 * np.finfo(float).eps * max(1.0, abs(a_lo)):
            break
    a_best, h_best, r_best = best
    if abs(h_best) > tol:
        raise CalibrationError(f"root find stopped with |k - lambda_2| = {abs(h_best):.3g}")
    return AdjustedResult(r_best, a_best, evals, bracket, trace)


def profile_entropy(problem: CalibrationProblem, kspec: KSpec, alpha: float, N=None, lam0=None):
    """``H(alpha) = -sum G(w(alpha)) + N K(alpha)`` and the inner result."""
    N = _population_size(problem, N)
    prob = replace(problem, mode=Mode.GecKnown, debias_total=N * alpha, costs=None)
    res = solve_gec(prob, lam0=lam0)
    return -res.primal_objective + N * k_eval(kspec, alpha)[0], res


def silverman_bandwidth(x) -> np.ndarray:
    """Per-coordinate rule of thumb ``1.06 sd n^(-1/5)``."""
    x = np.asarray(x, dtype=float)
    x = x.reshape(x.shape[0], -1)
    n = x.shape[0]
    sd = x.std(axis=0, ddof=1) if n > 1 else np.ones(x.shape[1])
    sd = np.where(sd > 0, sd, 1.0)
    return 1.06 * sd * n ** (-0.2)


def kernel_fit(query_x, sample_x, d, entropy, bandwidth=None) -> np.ndarray:
    """Locally constant fit ``m(x) = sum d g(d) K_h / sum d K_h`` at each query row."""
    d = np.asarray(d, dtype=float)
    xs = np.ascontiguousarray(np.asarray(sample_x, dtype=float).reshape(d.shape[0], -1))
    xq = np.ascontiguousarray(np.asarray(query_x, dtype=float).reshape(-1, xs.shape[1]))
    if bandwidth is None:
        h = silverman_bandwidth(xs)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (xs.shape[1],)).copy()
    if np.any(~(h > 0)):
        raise ValueError("bandwidth must be positive")
    m, empty = K.nw_alpha(xq, xs, d, entropy.g(d), h)
    if empty:
        raise EmptyNeighborhood(f"kernel weights vanish at {empty} query point(s); increase the bandwidth")
    return m


def kernel_alpha(pop_x, sample, entropy, bandwidth=None) -> float:
    """Kernel estimate of ``alpha_N = N^-1 sum_U g(d_i)``.

    ``bandwidth`` may be a scalar, one value per coordinate, or ``None`` for
    Silverman's rule on the sampled covariates.
    """
    return float(np.mean(kernel_fit(pop_x, sample.x_s, sample.d, entropy, bandwidth)))
