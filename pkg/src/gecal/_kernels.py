"""Numeric kernels behind the dual solver, the kernel alpha estimate and the
pairwise variance sum.

Two interchangeable implementations live here: a numba-compiled one and a
pure numpy one.  ``BACKEND`` names the one selected at import time; setting
``GECAL_DISABLE_NUMBA=1`` (or not having numba installed) selects numpy.
Both expose the same functions:

``dual_value(code, prm, Z, off, a, lam, target)``
    ``sum_i a_i c F((z_i'lam + o_i)/c) - lam'target``.
``dual_derivs(code, prm, Z, off, a, lam, target)``
    value, gradient and Hessian of the above.
``max_step(u, du, lo, hi)``
    largest ``t <= 1`` keeping every ``u + t du`` at least 1% of the current
    distance away from the interval ends.
``nw_alpha(xq, xs, wd, gd, h)``
    Nadaraya-Watson fit of ``gd`` at each query row with a Gaussian product
    kernel; returns the fitted values and the number of empty neighborhoods.
``pair_variance(pi, e)`` / ``pair_variance_joint(pij, pi, e)``
    the double sum ``sum_ij (pi_ij - pi_i pi_j)/pi_ij (e_i/pi_i)(e_j/pi_j)``
    under Poisson or for a supplied joint-probability matrix.

``prm`` is ``[param, 0, scale]``; ``code`` is ``EntropyKind.code``.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .entropy import EntropyKind, _F, _f, _fprime

_KINDS = tuple(EntropyKind)
FRACTION_TO_BOUNDARY = 0.99


# --------------------------------------------------------------------------
# numpy implementation
# --------------------------------------------------------------------------

def _np_terms(code, prm, u):
    kind = _KINDS[code]
    c = prm[2]
    p = (prm[0],)
    v = u / c
    with np.errstate(all="ignore"):
        return c * _F(kind, v, p), _f(kind, v, p), _fprime(kind, v, p) / c


def np_dual_value(code, prm, Z, off, a, lam, target):
    u = Z @ lam + off
    F, _, _ = _np_terms(code, prm, u)
    return float(a @ F - lam @ target)


def np_dual_derivs(code, prm, Z, off, a, lam, target):
    u = Z @ lam + off
    F, f, fp = _np_terms(code, prm, u)
    val = float(a @ F - lam @ target)
    grad = Z.T @ (a * f) - target
    hess = (Z * (a * fp)[:, None]).T @ Z
    return val, grad, hess


def np_max_step(u, du, lo, hi):
    t = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        if math.isfinite(hi):
            up = du > 0
            if np.any(up):
                t = min(t, float(np.min(FRACTION_TO_BOUNDARY * (hi - u[up]) / du[up])))
        if math.isfinite(lo):
            dn = du < 0
            if np.any(dn):
                t = min(t, float(np.min(FRACTION_TO_BOUNDARY * (lo - u[dn]) / du[dn])))
    return t


def np_nw_alpha(xq, xs, wd, gd, h, chunk=512):
    nq = xq.shape[0]
    out = np.empty(nq)
    empty = 0
    for start in range(0, nq, chunk):
        q = xq[start:start + chunk]
        # squared scaled distance, summed over coordinates
        d2 = (((q[:, None, :] - xs[None, :, :]) / h) ** 2).sum(axis=2)
        k = np.exp(-0.5 * d2)
        den = k @ wd
        num = k @ (wd * gd)
        bad = den <= 0.0
        empty += int(bad.sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            out[start:start + chunk] = num / den
    return out, empty


def np_pair_variance(pi, e):
    r = e / pi
    pij = np.outer(pi, pi)
    np.fill_diagonal(pij, pi)
    delta = (pij - np.outer(pi, pi)) / pij
    return float(r @ delta @ r)


def np_pair_variance_joint(pij, pi, e):
    r = e / pi
    delta = (pij - np.outer(pi, pi)) / pij
    return float(r @ delta @ r)


# --------------------------------------------------------------------------
# numba implementation
# --------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True, inline="always")
    def F_s(code, r, v):
        if code == 0:
            return 0.5 * v * v
        if code == 1:
            return -math.log(-v) - 1.0
        if code == 2:
            return math.exp(v)
        if code == 3:
            return v + 1.0 + math.exp(v)
        if code == 4:
            return v - math.log(-math.expm1(v))
        if code == 5:
            return -r * math.sqrt(r * r - v * v)
        if code == 6:
            return -4.0 / v
        if code == 7:
            return -math.sqrt(-2.0 * v)
        return (r * v) ** ((r + 1.0) / r) / (r + 1.0)

    @njit(cache=True, inline="always")
    def f_s(code, r, v):
        if code == 0:
            return v
        if code == 1:
            return -1.0 / v
        if code == 2:
            return math.exp(v)
        if code == 3:
            return 1.0 + math.exp(v)
        if code == 4:
            return -1.0 / math.expm1(v)
        if code == 5:
            return v / math.sqrt(1.0 - (v / r) ** 2)
        if code == 6:
            return 4.0 / (v * v)
        if code == 7:
            return 1.0 / math.sqrt(-2.0 * v)
        return (r * v) ** (1.0 / r)

    @njit(cache=True, inline="always")
    def fp_s(code, r, v):
        if code == 0:
            return 1.0
        if code == 1:
            return 1.0 / (v * v)
        if code == 2 or code == 3:
            return math.exp(v)
        if code == 4:
            em1 = math.expm1(v)
            return math.exp(v) / (em1 * em1)
        if code == 5:
            return (1.0 - (v / r) ** 2) ** -1.5
        if code == 6:
            return -8.0 / (v * v * v)
        if code == 7:
            return (-2.0 * v) ** -1.5
        return (r * v) ** (1.0 / r - 1.0)

    @njit(cache=True)
    def dual_value(code, prm, Z, off, a, lam, target):
        n, k = Z.shape
        r = prm[0]
        c = prm[2]
        val = 0.0
        for i in range(n):
            u = off[i]
            for j in range(k):
                u += Z[i, j] * lam[j]
            val += a[i] * c * F_s(code, r, u / c)
        for j in range(k):
            val -= lam[j] * target[j]
        return val

    @njit(cache=True)
    def dual_derivs(code, prm, Z, off, a, lam, target):
        n, k = Z.shape
        r = prm[0]
        c = prm[2]
        val = 0.0
        grad = np.zeros(k)
        hess = np.zeros((k, k))
        for i in range(n):
            u = off[i]
            for j in range(k):
                u += Z[i, j] * lam[j]
            v = u / c
            val += a[i] * c * F_s(code, r, v)
            w = a[i] * f_s(code, r, v)
            h = a[i] * fp_s(code, r, v) / c
            for j in range(k):
                grad[j] += w * Z[i, j]
                zh = h * Z[i, j]
                for l in range(j + 1):
                    hess[j, l] += zh * Z[i, l]
        for j in range(k):
            val -= lam[j] * target[j]
            grad[j] -= target[j]
            for l in range(j):
                hess[l, j] = hess[j, l]
        return val, grad, hess

    @njit(cache=True)
    def max_step(u, du, lo, hi):
        t = 1.0
        for i in range(u.shape[0]):
            if du[i] > 0.0 and hi < np.inf:
                s = FRACTION_TO_BOUNDARY * (hi - u[i]) / du[i]
                if s < t:
                    t = s
            elif du[i] < 0.0 and lo > -np.inf:
                s = FRACTION_TO_BOUNDARY * (lo - u[i]) / du[i]
                if s < t:
                    t = s
        return t

    @njit(cache=True)
    def nw_alpha(xq, xs, wd, gd, h):
        nq, p = xq.shape
        ns = xs.shape[0]
        out = np.empty(nq)
        empty = 0
        for q in range(nq):
            num = 0.0
            den = 0.0
            for i in range(ns):
                d2 = 0.0
                for j in range(p):
                    t = (xq[q, j] - xs[i, j]) / h[j]
                    d2 += t * t
                k = math.exp(-0.5 * d2) * wd[i]
                den += k
                num += k * gd[i]
            if den <= 0.0:
                empty += 1
                out[q] = np.nan
            else:
                out[q] = num / den
        return out, empty

    @njit(cache=True)
    def pair_variance(pi, e):
        n = pi.shape[0]
        total = 0.0
        for i in range(n):
            ri = e[i] / pi[i]
            for j in range(n):
                pij = pi[i] if i == j else pi[i] * pi[j]
                total += (pij - pi[i] * pi[j]) / pij * ri * (e[j] / pi[j])
        return total

    @njit(cache=True)
    def pair_variance_joint(pij, pi, e):
        n = pi.shape[0]
        total = 0.0
        for i in range(n):
            ri = e[i] / pi[i]
            for j in range(n):
                total += (pij[i, j] - pi[i] * pi[j]) / pij[i, j] * ri * (e[j] / pi[j])
        return total

    return dict(
        dual_value=dual_value,
        dual_derivs=dual_derivs,
        max_step=max_step,
        nw_alpha=nw_alpha,
        pair_variance=pair_variance,
        pair_variance_joint=pair_variance_joint,
    )


NUMPY = dict(
    dual_value=np_dual_value,
    dual_derivs=np_dual_derivs,
    max_step=np_max_step,
    nw_alpha=np_nw_alpha,
    pair_variance=np_pair_variance,
    pair_variance_joint=np_pair_variance_joint,
)

NUMBA = None
if os.environ.get("GECAL_DISABLE_NUMBA", "").strip() not in ("1", "true", "yes"):
    try:
        NUMBA = _build_numba()
    except ImportError:
        NUMBA = None

BACKEND = "numba" if NUMBA is not None else "numpy"
_ACTIVE = NUMBA if NUMBA is not None else NUMPY

dual_value = _ACTIVE["dual_value"]
dual_derivs = _ACTIVE["dual_derivs"]
max_step = _ACTIVE["max_step"]
nw_alpha = _ACTIVE["nw_alpha"]
pair_variance = _ACTIVE["pair_variance"]
pair_variance_joint = _ACTIVE["pair_variance_joint"]
