"""Point estimators, regression coefficients and design-based variances.

All variance estimators here are the double sum

    V = sum_{i,j in A} (pi_ij - pi_i pi_j)/pi_ij * (e_i/pi_i) * (e_j/pi_j)

for a method-specific residual ``e``; dividing by ``N^2`` gives the variance
of the mean.  Under Poisson sampling only the diagonal survives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from . import _kernels as K
from .adjusted import KKind, kernel_alpha, kernel_fit, make_kspec, solve_adjusted
from .calibration import CalibrationProblem, Mode, solve_ds, solve_gec
from .design import DesignInfo, SampleData
from .errors import SingularHessian

COND_MAX = 1e12


# --------------------------------------------------------------------------
# simple estimators
# --------------------------------------------------------------------------

def ht_estimate(sample: SampleData, as_mean: bool = False) -> float:
    """Horvitz-Thompson ``sum_A d_i y_i`` (divided by N for a mean)."""
    t = float(sample.d @ sample.y_s)
    return t / sample.N if as_mean else t


def hajek_estimate(sample: SampleData) -> float:
    """Hajek mean ``sum d y / sum d``."""
    return float(sample.d @ sample.y_s / sample.d.sum())


def calibrated_estimate(weights, y, N=None, as_mean: bool = False) -> float:
    """``sum w_i y_i``, divided by ``N`` when ``as_mean``."""
    t = float(np.asarray(weights, dtype=float) @ np.asarray(y, dtype=float))
    if as_mean:
        if N is None:
            raise ValueError("N is required for a mean")
        return t / N
    return t


def weighted_ls(z, y, w) -> np.ndarray:
    """Coefficients of the ``w``-weighted least-squares fit of ``y`` on ``z``.

    Raises ``SingularHessian`` when the equilibrated Gram matrix has a
    condition estimate above 1e12.
    """
    z = np.asarray(z, dtype=float)
    z = z.reshape(z.shape[0], -1)
    w = np.asarray(w, dtype=float)
    gram = (z * w[:, None]).T @ z
    diag = np.diag(gram)
    if np.any(diag <= 0):
        raise SingularHessian("weighted Gram matrix has a zero column")
    s = 1.0 / np.sqrt(diag)
    cond = float(np.linalg.cond(gram * s[:, None] * s[None, :]))
    if not cond <= COND_MAX:
        raise SingularHessian(f"weighted Gram matrix condition estimate {cond:.3g}", cond)
    return np.linalg.solve(gram, (z * w[:, None]).T @ np.asarray(y, dtype=float))


def greg_estimate(sample: SampleData, x_totals, as_mean: bool = False):
    """GREG estimator ``sum_U x'b + sum_A d (y - x'b)`` with d-weighted ``b``.

    Returns ``(theta, beta)``.
    """
    beta = weighted_ls(sample.x_s, sample.y_s, sample.d)
    resid = sample.y_s - sample.x_s @ beta
    t = float(np.asarray(x_totals, dtype=float) @ beta + sample.d @ resid)
    return (t / sample.N if as_mean else t), beta


def gamma_hat(z, y, d, entropy, costs=None) -> np.ndarray:
    """Regression of ``y`` on ``z`` weighted by ``1/g'(d_i)`` (times ``1/c_i``)."""
    w = entropy.reg_weight(np.asarray(d, dtype=float))
    if costs is not None:
        w = w / np.asarray(costs, dtype=float)
    return weighted_ls(z, y, w)


def gamma_opt(z, y, pi) -> np.ndarray:
    """Design-optimal coefficient with weights ``pi q``, ``q = pi^-2 - pi^-1``.

    Computed over the population, so it is a simulation-side oracle.
    """
    pi = np.asarray(pi, dtype=float)
    q = pi**-2 - 1.0 / pi
    return weighted_ls(z, y, pi * q)


def gamma_population(z, y, pi, entropy) -> np.ndarray:
    """Population coefficient with weights ``pi / g'(d)``, ``d = 1/pi``."""
    pi = np.asarray(pi, dtype=float)
    return weighted_ls(z, y, pi * entropy.reg_weight(1.0 / pi))


# --------------------------------------------------------------------------
# variance
# --------------------------------------------------------------------------

def variance_estimate(design: DesignInfo, residuals, N=None, joint=None) -> float:
    """Double-sum variance of ``sum_A d_i e_i``.

    ``joint`` optionally supplies the ``pi_ij`` matrix; by default the
    Poisson rule is used.  With ``N`` the variance of the mean is returned.
    """
    pi = np.ascontiguousarray(design.pi, dtype=float)
    e = np.ascontiguousarray(residuals, dtype=float)
    if joint is None:
        v = K.pair_variance(pi, e)
    else:
        v = K.pair_variance_joint(np.ascontiguousarray(joint, dtype=float), pi, e)
    v = max(float(v), 0.0)
    return v / float(N) ** 2 if N is not None else v


def poisson_variance(pi, residuals, N=None) -> float:
    """Diagonal form ``sum (1 - pi) e^2 / pi^2``."""
    pi = np.asarray(pi, dtype=float)
    e = np.asarray(residuals, dtype=float)
    v = float(np.sum((1.0 - pi) * e * e / (pi * pi)))
    return v / float(N) ** 2 if N is not None else v


@dataclass
class SigmaBlocks:
    xx: np.ndarray
    xg: np.ndarray
    gg: float

    @property
    def gg_x(self) -> float:
        """``S_gg - S_gx S_xx^-1 S_xg`` (nonnegative up to rounding)."""
        return max(float(self.gg - self.xg @ np.linalg.solve(self.xx, self.xg)), 0.0)


def sigma_blocks(x, d, entropy, N) -> SigmaBlocks:
    """Sample estimates ``N^-1 sum_A (1/g'(d)) [x x', x g; g x', g g]``."""
    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float).reshape(d.shape[0], -1)
    w = entropy.reg_weight(d) / N
    g = entropy.g(d)
    xw = x * w[:, None]
    return SigmaBlocks(xw.T @ x, xw.T @ g, float(w @ (g * g)))


def _projection(x, d, entropy):
    w = entropy.reg_weight(d)
    b = weighted_ls(x, entropy.g(d), w)
    return x @ b


def m_hat_projection(x, d, entropy) -> np.ndarray:
    """K1 correction: ``1/g'``-weighted projection of ``g(d)`` on ``x``."""
    d = np.asarray(d, dtype=float)
    return _projection(np.asarray(x, dtype=float).reshape(d.shape[0], -1), d, entropy)


def m_hat_shrink(x, d, entropy, alpha_hat, N) -> np.ndarray:
    """K2 correction: the projection shrunk by ``(a+1)/(S_gg.x + a + 1)``."""
    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float).reshape(d.shape[0], -1)
    s = sigma_blocks(x, d, entropy, N).gg_x
    return (alpha_hat + 1.0) / (s + alpha_hat + 1.0) * _projection(x, d, entropy)


def m_hat_general(x, d, entropy, N, kappa, kprime) -> np.ndarray:
    """``g + [kappa + S^-1 (g - P)] / (k' - S^-1)`` with ``S = S_gg.x``.

    ``kappa = 0, k' = 0`` gives the K1 projection; ``kappa = g/(a+1)`` and
    ``k' = -1/(a+1)`` give the K2 shrinkage.
    """
    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float).reshape(d.shape[0], -1)
    g = entropy.g(d)
    s = sigma_blocks(x, d, entropy, N).gg_x
    if s <= 0:
        raise SingularHessian("S_gg.x vanishes; g(d) lies in the span of x")
    proj = _projection(x, d, entropy)
    return g + (np.asarray(kappa, dtype=float) + (g - proj) / s) / (kprime - 1.0 / s)


def variance_estimate_adjusted(design: DesignInfo, x, y, gamma, m_hat, N=None) -> float:
    """Double-sum variance with residuals ``y - (x', m_hat) gamma``."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float).reshape(y.shape[0], -1)
    zt = np.column_stack([x, m_hat])
    return variance_estimate(design, y - zt @ np.asarray(gamma, dtype=float), N)


def confidence_interval(theta: float, variance: float, level: float = 0.95):
    """Normal-theory interval ``theta -/+ z sqrt(variance)``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    half = norm.ppf(1.0 - (1.0 - level) / 2.0) * math.sqrt(variance)
    return theta - half, theta + half


# --------------------------------------------------------------------------
# one-call estimation
# --------------------------------------------------------------------------

METHODS = ("hajek", "ht", "greg", "ds", "ds-debias", "gec0", "gec1", "gec2", "gec-kernel")
CALIBRATION_METHODS = ("ds", "ds-debias", "gec0", "gec1", "gec2", "gec-kernel")
NEEDS_ENTROPY = CALIBRATION_METHODS


@dataclass
class EstimateReport:
    estimator: str
    entropy: str
    theta_hat: float
    variance: float
    ci: tuple
    level: float
    gamma: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = field(default=None, repr=False)
    weights: Optional[np.ndarray] = field(default=None, repr=False)
    converged: bool = True
    alpha_hat: Optional[float] = None

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)


@dataclass
class Controls:
    """Population information available to the estimators.

    ``x_totals`` matches the columns of the sampled ``x`` (intercept
    included when present).  ``g_total`` is ``sum_U g(d_i)`` for the entropy
    in use, needed only by ``gec0`` and ``ds-debias``.  ``pop_x`` holds the
    raw population covariates for ``gec-kernel``.
    """

    N: int
    x_totals: np.ndarray
    g_total: Optional[float] = None
    pop_x: Optional[np.ndarray] = None
    bandwidth: Optional[object] = None


def _report(method, entropy, theta, var, level, **kw):
    return EstimateReport(method, entropy, theta, var, confidence_interval(theta, var, level), level, **kw)


def estimate(method: str, sample: SampleData, x, controls: Controls, entropy=None,
             level: float = 0.95, as_mean: bool = True) -> EstimateReport:
    """Point estimate, variance and interval for one method.

    Parameters
    ----------
    method : str
        One of ``METHODS``.
    sample : SampleData
    x : (n, p) array
        Calibration covariates of the sampled units (with intercept if the
        totals include ``N``).
    controls : Controls
    entropy : EntropySpec, optional
        Required by the calibration methods.
    """
    N = controls.N
    scale = N if as_mean else 1.0
    vN = N if as_mean else None
    y, d, design = sample.y_s, sample.d, sample.design
    ename = entropy.label() if entropy is not None and method in NEEDS_ENTROPY else ""
    if method in NEEDS_ENTROPY and entropy is None:
        raise ValueError(f"method {method} needs an entropy")

    if method == "ht":
        return _report(method, ename, float(d @ y) / scale, variance_estimate(design, y, vN), level,
                       weights=d)
    if method == "hajek":
        theta = hajek_estimate(sample)
        if not as_mean:
            theta *= N
        e = y - hajek_estimate(sample)
        return _report(method, ename, theta, variance_estimate(design, e, vN), level,
                       weights=d * N / d.sum())
    if method == "greg":
        beta = weighted_ls(x, y, d)
        e = y - x @ beta
        theta = float(np.asarray(controls.x_totals) @ beta + d @ e) / scale
        return _report(method, ename, theta, variance_estimate(design, e, vN), level, gamma=beta, residuals=e)

    gd = entropy.g(d)
    z = np.column_stack([x, gd])
    if method == "ds":
        res = solve_ds(CalibrationProblem(x, d, controls.x_totals, entropy, Mode.DsBenchmarkOnly))
        coef = weighted_ls(x, y, d)
        e = y - x @ coef
    elif method == "ds-debias":
        res = solve_ds(CalibrationProblem(x, d, controls.x_totals, entropy, Mode.DsWithDebias,
                                          debias_total=controls.g_total))
        coef = weighted_ls(z, y, d)
        e = y - z @ coef
    elif method == "gec0":
        res = solve_gec(CalibrationProblem(x, d, controls.x_totals, entropy, Mode.GecKnown,
                                           debias_total=controls.g_total))
        coef = gamma_hat(z, y, d, entropy)
        e = y - z @ coef
    elif method == "gec1":
        prob = CalibrationProblem(x, d, controls.x_totals, entropy, Mode.GecKnown, debias_total=0.0)
        adj = solve_adjusted(prob, make_kspec(KKind.K1_Identity, d, entropy, N), N=N)
        res = adj.result
        # residuals on x alone with 1/g' weights
        coef = gamma_hat(x, y, d, entropy)
        e = y - x @ coef
        theta = float(res.omega @ y) / scale
        return _report(method, ename, theta, variance_estimate(design, e, vN), level, gamma=coef,
                       residuals=e, weights=res.omega, alpha_hat=adj.alpha_hat)
    elif method == "gec2":
        prob = CalibrationProblem(x, d, controls.x_totals, entropy, Mode.GecKnown, debias_total=0.0)
        adj = solve_adjusted(prob, make_kspec(KKind.K2_QinShrink, d, entropy, N), N=N)
        res = adj.result
        coef = gamma_hat(z, y, d, entropy)
        m = m_hat_shrink(x, d, entropy, adj.alpha_hat, N)
        e = y - np.column_stack([x, m]) @ coef
        theta = float(res.omega @ y) / scale
        return _report(method, ename, theta, variance_estimate(design, e, vN), level, gamma=coef,
                       residuals=e, weights=res.omega, alpha_hat=adj.alpha_hat)
    elif method == "gec-kernel":
        if controls.pop_x is None:
            raise ValueError("gec-kernel needs population covariates")
        alpha = kernel_alpha(controls.pop_x, sample, entropy, controls.bandwidth)
        res = solve_gec(CalibrationProblem(x, d, controls.x_totals, entropy, Mode.GecKnown,
                                           debias_total=N * alpha))
        coef = gamma_hat(z, y, d, entropy)
        m = kernel_fit(sample.x_s, sample.x_s, d, entropy, controls.bandwidth)
        e = y - np.column_stack([x, m]) @ coef
        theta = float(res.omega @ y) / scale
        return _report(method, ename, theta, variance_estimate(design, e, vN), level, gamma=coef,
                       residuals=e, weights=res.omega, alpha_hat=alpha)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    theta = float(res.omega @ y) / scale
    return _report(method, ename, theta, variance_estimate(design, e, vN), level, gamma=coef,
                   residuals=e, weights=res.omega)
