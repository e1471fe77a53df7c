"""Calibration weights from the dual of an entropy program.

Every supported program has the dual form

    minimize  Phi(lam) = sum_i a_i F(z_i' lam + o_i) - lam' T

with weights read off the optimal linear predictor ``u_i = z_i' lam + o_i``.
The modes differ only in ``z``, ``a``, ``o``, ``T`` and the weight map:

=================  ===================  =====  ======  ===========================
mode               dual covariate       a_i    o_i     weight
=================  ===================  =====  ======  ===========================
GecKnown           (x_i, g(d_i))        1      0       f(u_i)
ModelAssisted      (x_i/c_i, g(d_i))    c_i    0       f(u_i)
GecScaled          (x_i, g(s d_i))      1      0       f(u_i)/s,  target s*T
DsBenchmarkOnly    x_i                  d_i    0       d_i (f(u_i) - b)
DsWithDebias       (x_i, g(d_i))        d_i    0       d_i (f(u_i) - b)
pinned (GEC1)      x_i                  1      g(d_i)  f(u_i)
=================  ===================  =====  ======  ===========================

``s = n/N``.  ``b`` is 1 for entropies whose domain excludes 1 (cross entropy
and shifted exponential tilting) and 0 otherwise; it turns the divergence
``d G(w/d)`` into ``d G(1 + w/d)`` so that ``w = d`` stays reachable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from . import _kernels as K
from .entropy import EntropySpec
from .errors import InfeasibleStart, Nonconvergence, SingularHessian

GRAD_TOL = 1e-9
MAX_ITER = 100
COND_MAX = 1e12
ARMIJO_C = 1e-4


class Mode(enum.Enum):
    GecKnown = "gec"
    DsBenchmarkOnly = "ds"
    DsWithDebias = "ds-debias"
    GecScaled = "gec-scaled"
    ModelAssisted = "model-assisted"


@dataclass
class CalibrationProblem:
    """Sample covariates, design weights and control totals.

    Parameters
    ----------
    x : (n, p) array
        Benchmark covariates.  Include a column of ones to control the
        population size.
    d : (n,) array
        Design weights ``1/pi_i``.
    x_totals : (p,) array
        Population totals of ``x``.
    entropy : EntropySpec
    mode : Mode
    debias_total : float, optional
        Population total of the debiasing covariate: ``sum_U g(d_i)`` for
        GecKnown and DsWithDebias, ``sum_U g(s d_i)`` for GecScaled and
        ``sum_U g(d_i) c_i`` for ModelAssisted.
    costs : (n,) array, optional
        Positive unit costs ``c_i`` (ModelAssisted only; default 1).
    n_over_N : float, optional
        Scale ``s = n/N`` for GecScaled.
    """

    x: np.ndarray
    d: np.ndarray
    x_totals: np.ndarray
    entropy: EntropySpec
    mode: Mode = Mode.GecKnown
    debias_total: Optional[float] = None
    costs: Optional[np.ndarray] = None
    n_over_N: Optional[float] = None

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        n = self.d.shape[0]
        self.x = np.asarray(self.x, dtype=float).reshape(n, -1)
        self.x_totals = np.atleast_1d(np.asarray(self.x_totals, dtype=float))
        if self.x_totals.shape[0] != self.x.shape[1]:
            raise ValueError("x_totals length must equal the number of x columns")
        if self.costs is not None:
            self.costs = np.asarray(self.costs, dtype=float)
            if np.any(self.costs <= 0):
                raise ValueError("unit costs must be positive")
        if self.uses_debias and self.debias_total is None:
            raise ValueError(f"mode {self.mode.value} needs debias_total")
        if not np.all(np.isfinite(self.x_totals)):
            raise ValueError("control totals must be finite")

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def uses_debias(self) -> bool:
        return self.mode is not Mode.DsBenchmarkOnly

    @property
    def scale(self) -> float:
        return float(self.n_over_N) if self.mode is Mode.GecScaled else 1.0

    def debias_column(self) -> np.ndarray:
        if self.mode is Mode.GecScaled:
            return self.entropy.g(self.scale * self.d)
        return self.entropy.g(self.d)

    @property
    def zs(self) -> np.ndarray:
        """Constraint covariates: ``sum_A w_i zs_i = totals``."""
        if not self.uses_debias:
            return self.x
        gcol = self.debias_column()
        if self.mode is Mode.ModelAssisted and self.costs is not None:
            gcol = gcol * self.costs
        return np.column_stack([self.x, gcol])

    @property
    def totals(self) -> np.ndarray:
        if not self.uses_debias:
            return self.x_totals
        return np.append(self.x_totals, float(self.debias_total))


@dataclass
class CalibrationResult:
    """Weights, dual vector and solver diagnostics."""

    omega: np.ndarray
    lam: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool
    constraint_residual: float
    dual_objective: float
    primal_objective: float
    mode: str = ""
    u: np.ndarray = field(default=None, repr=False)

    @property
    def lambda1(self) -> np.ndarray:
        return self.lam[:-1] if self.mode in _DEBIAS_MODES else self.lam

    @property
    def lambda2(self) -> Optional[float]:
        return float(self.lam[-1]) if self.mode in _DEBIAS_MODES else None


_DEBIAS_MODES = {m.value for m in Mode if m is not Mode.DsBenchmarkOnly}


def ds_shift(entropy) -> float:
    """1 when the entropy domain excludes 1, else 0."""
    return 0.0 if entropy.domain_lo < 1.0 < entropy.domain_hi else 1.0


# --------------------------------------------------------------------------
# generic damped Newton on the dual
# --------------------------------------------------------------------------

def _check_columns(Z):
    k = Z.shape[1]
    if Z.shape[0] < k:
        raise SingularHessian(f"{Z.shape[0]} sampled units cannot determine {k} multipliers")
    for j in range(k):
        for l in range(j):
            if np.array_equal(Z[:, j], Z[:, l]):
                raise SingularHessian(f"covariate columns {l} and {j} are identical")


def _cond(H):
    diag = np.diag(H)
    if not np.all(np.isfinite(H)) or np.any(diag <= 0):
        return math.inf
    s = 1.0 / np.sqrt(diag)
    return float(np.linalg.cond(H * s[:, None] * s[None, :]))


def _feasible_start(entropy, Z, off, u_goal):
    """Least-squares fit of ``u_goal``; phase-1 LP when that leaves the image."""
    lo, hi = entropy.image
    lam, *_ = np.linalg.lstsq(Z, u_goal - off, rcond=None)
    u = Z @ lam + off
    if np.all(entropy.in_image(u)):
        return lam
    # maximize margin t: lo + t <= u_i <= hi - t, 0 <= t <= 1
    k = Z.shape[1]
    rows, rhs = [], []
    if math.isfinite(hi):
        rows.append(np.column_stack([Z, np.ones(len(off))]))
        rhs.append(hi - off)
    if math.isfinite(lo):
        rows.append(np.column_stack([-Z, np.ones(len(off))]))
        rhs.append(off - lo)
    cost = np.zeros(k + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs),
                  bounds=[(None, None)] * k + [(0.0, 1.0)], method="highs")
    if res.status != 0 or res.x[-1] <= 1e-12:
        raise InfeasibleStart(
            f"no multiplier keeps every linear predictor inside the image of g "
            f"for entropy {entropy.label()}"
        )
    return res.x[:k]


def newton_dual(entropy, Z, off, a, target, tol, lam0, max_iter=MAX_ITER):
    """Minimize ``sum a F(Z lam + o) - lam' target`` by damped Newton.

    ``tol`` is the per-component gradient tolerance.  Returns
    ``(lam, value, grad, iterations)``.
    """
    code = entropy.kind.code
    prm = entropy.kernel_params
    lo, hi = entropy.image
    lam = np.array(lam0, dtype=float)
    u = Z @ lam + off
    if not np.all(entropy.in_image(u)):
        raise InfeasibleStart("starting multiplier is outside the image of g")
    absZ = np.abs(Z)
    for it in range(max_iter + 1):
        val, grad, H = K.dual_derivs(code, prm, Z, off, a, lam, target)
        # rounding floor for sums of large terms
        floor = 64 * np.finfo(float).eps * (absZ.T @ np.abs(a * entropy.f_unchecked(u)))
        if np.all(np.abs(grad) <= np.maximum(tol, floor)):
            # one more full Newton step is nearly free and, by quadratic
            # convergence, takes the multiplier to rounding level
            try:
                step = np.linalg.solve(H, -grad)
            except np.linalg.LinAlgError:
                return lam, val, grad, it
            if K.max_step(u, Z @ step, lo, hi) == 1.0:
                v2, g2, _ = K.dual_derivs(code, prm, Z, off, a, lam + step, target)
                if np.max(np.abs(g2)) < np.max(np.abs(grad)):
                    return lam + step, v2, g2, it + 1
            return lam, val, grad, it
        if it == max_iter:
            break
        cond = _cond(H)
        if cond > COND_MAX:
            raise SingularHessian(f"dual Hessian condition estimate {cond:.3g} exceeds {COND_MAX:g}", cond)
        step = np.linalg.solve(H, -grad)
        du = Z @ step
        slope = float(grad @ step)
        t0 = K.max_step(u, du, lo, hi)
        t = t0
        accepted = False
        if -slope <= 1e-10 * (1 + abs(val)) and t0 == 1.0:
            # predicted decrease is below what the objective resolves, so
            # Armijo would only accept noise; judge the full step by the gradient
            cand = lam + step
            _, g2, _ = K.dual_derivs(code, prm, Z, off, a, cand, target)
            if np.max(np.abs(g2)) < np.max(np.abs(grad)):
                lam = cand
                u = Z @ lam + off
                continue
        while t > 1e-14:
            cand = lam + t * step
            v = K.dual_value(code, prm, Z, off, a, cand, target)
            if math.isfinite(v) and v <= val + ARMIJO_C * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # at the rounding level the objective stops resolving decreases;
            # fall back to the gradient norm
            cand = lam + t0 * step
            _, g2, _ = K.dual_derivs(code, prm, Z, off, a, cand, target)
            if -slope <= 1e-12 * (1 + abs(val)) and np.max(np.abs(g2)) < np.max(np.abs(grad)):
                accepted = True
            else:
                raise Nonconvergence(f"line search stalled at iteration {it}")
        lam = cand
        u = Z @ lam + off
    raise Nonconvergence(f"no convergence within {max_iter} Newton iterations "
                         f"(max |grad| = {np.max(np.abs(grad)):.3g})")


# --------------------------------------------------------------------------
# public solvers
# --------------------------------------------------------------------------

def _finish(problem, entropy, lam, val, grad, its, u, omega, primal, constraint_z, totals):
    resid = float(np.max(np.abs(constraint_z.T @ omega - totals) / (1.0 + np.abs(totals))))
    return CalibrationResult(
        omega=omega, lam=lam, iterations=its,
        grad_norm=float(np.max(np.abs(grad))),
        converged=True, constraint_residual=resid,
        dual_objective=float(val), primal_objective=float(primal),
        mode=problem.mode.value if problem is not None else "pinned", u=u,
    )


def solve_gec(problem: CalibrationProblem, lam0=None) -> CalibrationResult:
    """Entropy calibration with a known debiasing total.

    Handles ``Mode.GecKnown`` and ``Mode.ModelAssisted``.  The start is the
    multiplier reproducing the design weights as closely as possible (exactly
    ``(0, ..., 0, 1)`` for GecKnown), unless ``lam0`` is given.
    """
    if problem.mode is Mode.GecScaled:
        return solve_gec_scaled(problem, problem.n, problem.n / problem.scale)
    if problem.mode not in (Mode.GecKnown, Mode.ModelAssisted):
        raise ValueError(f"solve_gec does not handle mode {problem.mode.value}")
    ent = problem.entropy
    gd = ent.g(problem.d)
    if problem.mode is Mode.ModelAssisted and problem.costs is not None:
        c = problem.costs
        Zt = np.column_stack([problem.x / c[:, None], gd])
        a = c
    else:
        Zt = np.column_stack([problem.x, gd])
        a = np.ones(problem.n)
    T = problem.totals
    off = np.zeros(problem.n)
    _check_columns(Zt)
    if lam0 is None:
        lam0 = _feasible_start(ent, Zt, off, gd)
    lam, val, grad, its = newton_dual(ent, Zt, off, a, T, GRAD_TOL * (1 + np.abs(T)), lam0)
    u = Zt @ lam
    omega = ent.f(u)
    primal = float(a @ ent.G(omega))
    return _finish(problem, ent, lam, val, grad, its, u, omega, primal, problem.zs, T)


def solve_ds(problem: CalibrationProblem, lam0=None) -> CalibrationResult:
    """Divergence calibration ``min sum d G(b + w/d)`` (see module notes for b)."""
    if problem.mode not in (Mode.DsBenchmarkOnly, Mode.DsWithDebias):
        raise ValueError(f"solve_ds does not handle mode {problem.mode.value}")
    ent = problem.entropy
    b = ds_shift(ent)
    Z = problem.zs
    T = problem.totals
    d = problem.d
    off = np.zeros(problem.n)
    _check_columns(Z)
    target = T + b * (Z.T @ d)
    if lam0 is None:
        lam0 = _feasible_start(ent, Z, off, np.full(problem.n, float(ent.g(1.0 + b))))
    lam, val, grad, its = newton_dual(ent, Z, off, d, target, GRAD_TOL * (1 + np.abs(T)), lam0)
    u = Z @ lam
    ratio = ent.f(u) - b
    omega = d * ratio
    primal = float(d @ ent.G(ratio + b))
    return _finish(problem, ent, lam, val, grad, its, u, omega, primal, Z, T)


def solve_gec_scaled(problem: CalibrationProblem, n: int, N: int, lam0=None) -> CalibrationResult:
    """Scaled entropy calibration ``min sum G((n/N) w)``.

    The debiasing covariate is ``g(n d_i / N)``; ``problem.debias_total`` must
    be ``sum_U g(n d_i / N)``.
    """
    if not (n > 0 and N > 0):
        raise ValueError("n and N must be positive")
    s = n / N
    if problem.mode is not Mode.GecScaled or problem.n_over_N != s:
        problem = CalibrationProblem(problem.x, problem.d, problem.x_totals, problem.entropy,
                                     Mode.GecScaled, problem.debias_total, None, s)
    ent = problem.entropy
    Z = problem.zs
    T = problem.totals
    off = np.zeros(problem.n)
    _check_columns(Z)
    if lam0 is None:
        lam0 = _feasible_start(ent, Z, off, Z[:, -1])
    lam, val, grad, its = newton_dual(ent, Z, off, np.ones(problem.n), s * T,
                                      GRAD_TOL * s * (1 + np.abs(T)), lam0)
    u = Z @ lam
    v = ent.f(u)
    omega = v / s
    primal = float(np.sum(ent.G(v)))
    return _finish(problem, ent, lam, val, grad, its, u, omega, primal, Z, T)


def solve_pinned(x, d, x_totals, entropy, lam0=None) -> CalibrationResult:
    """Entropy calibration with the debiasing multiplier fixed at 1.

    Solves ``min sum G(w) - w g(d)`` under ``sum w x = x_totals`` so that
    ``g(w_i) = lam' x_i + g(d_i)``.
    """
    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float).reshape(d.shape[0], -1)
    T = np.atleast_1d(np.asarray(x_totals, dtype=float))
    gd = entropy.g(d)
    _check_columns(x)
    if lam0 is None:
        lam0 = _feasible_start(entropy, x, gd, gd)
    lam, val, grad, its = newton_dual(entropy, x, gd, np.ones(d.shape[0]), T,
                                      GRAD_TOL * (1 + np.abs(T)), lam0)
    u = x @ lam + gd
    omega = entropy.f(u)
    primal = float(np.sum(entropy.G(omega)) - omega @ gd)
    return _finish(None, entropy, lam, val, grad, its, u, omega, primal, x, T)
