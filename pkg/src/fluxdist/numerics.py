"""Numerical kernels: Nelder-Mead, incomplete gamma, grid quadrature and the
closed-form no-background likelihood.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError

__all__ = [
    "SimplexConfig",
    "nelder_mead",
    "log_upper_incomplete_gamma",
    "upper_incomplete_gamma",
    "closed_form_loglik_nobg",
    "integrate_grid",
]

_EPS = 1e-16
_FPMIN = 1e-300
_MAX_TERMS = 100_000
_EULER_GAMMA = 0.57721566490153286061
# shape parameters this close to a nonpositive integer use the exact-integer path
_INTEGER_SNAP = 1e-10


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimplexConfig:
    """Settings for :func:`nelder_mead`.

    ``initial_step`` is the absolute offset used to build the starting
    simplex around ``x0`` along each coordinate axis.  The search stops once
    the simplex is no wider than ``x_tol`` in every coordinate and the spread
    of its values is at most ``f_tol * max(1, |f_best|)``.
    """

    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    max_iters: int = 2000
    x_tol: float = 1e-8
    f_tol: float = 1e-10
    initial_step: float = 0.25

    def __post_init__(self):
        if not self.reflection > 0:
            raise DomainError("reflection coefficient must be > 0")
        if not self.expansion > 1:
            raise DomainError("expansion coefficient must be > 1")
        if not 0 < self.contraction < 1:
            raise DomainError("contraction coefficient must be in (0, 1)")
        if not 0 < self.shrink < 1:
            raise DomainError("shrink coefficient must be in (0, 1)")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if not (self.x_tol > 0 and self.f_tol > 0):
            raise DomainError("tolerances must be > 0")
        if not self.initial_step > 0:
            raise DomainError("initial_step must be > 0")


def _safe_eval(f, x):
    val = float(f(x))
    # nan and both infinities rank below every finite value
    if not math.isfinite(val):
        return math.inf
    return val


def nelder_mead(f, x0, cfg: SimplexConfig | None = None):
    """Minimize ``f`` with the Nelder-Mead simplex method.

    Non-finite objective values (``nan``, ``+inf`` and ``-inf``) are treated
    as infeasible and rank worse than any finite value, so the returned point
    is never a sentinel unless every evaluated point was one.

    Parameters
    ----------
    f : callable
        Objective taking a 1-D float array.
    x0 : array_like
        Starting point.
    cfg : SimplexConfig, optional

    Returns
    -------
    x_best : ndarray
    f_best : float
    """
    cfg = cfg or SimplexConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if x0.ndim != 1 or x0.size == 0:
        raise DomainError("x0 must be a non-empty vector")
    if not np.all(np.isfinite(x0)):
        raise DomainError("x0 must be finite")

    dim = x0.size
    simplex = np.empty((dim + 1, dim))
    simplex[0] = x0
    for i in range(dim):
        simplex[i + 1] = x0
        simplex[i + 1, i] += cfg.initial_step
    fvals = np.array([_safe_eval(f, v) for v in simplex])

    alpha, chi, gamma, sigma = cfg.reflection, cfg.expansion, cfg.contraction, cfg.shrink
    for _ in range(cfg.max_iters):
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]

        diameter = np.max(np.abs(simplex[1:] - simplex[0]))
        spread = fvals[-1] - fvals[0]
        if diameter <= cfg.x_tol and spread <= cfg.f_tol * max(1.0, abs(fvals[0])):
            break

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = _safe_eval(f, xr)

        if fr < fvals[0]:
            xe = centroid + chi * (xr - centroid)
            fe = _safe_eval(f, xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue

        if fr < fvals[-1]:
            xc = centroid + gamma * (xr - centroid)
            fc = _safe_eval(f, xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + gamma * (worst - centroid)
            fc = _safe_eval(f, xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue

        best = simplex[0]
        simplex[1:] = best + sigma * (simplex[1:] - best)
        fvals[1:] = [_safe_eval(f, v) for v in simplex[1:]]

    i = int(np.argmin(fvals))
    return simplex[i].copy(), float(fvals[i])


# ---------------------------------------------------------------------------
# Upper incomplete gamma for real (possibly negative) a
# ---------------------------------------------------------------------------

def _log_gamma_series(a, x):
    # a > 0, x < a + 1: Gamma(a, x) = Gamma(a) * (1 - P(a, x))
    ap = a
    term = total = 1.0 / a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise NumericalError(f"incomplete gamma series failed for a={a}, x={x}")
    p = total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    if p >= 1.0:
        raise NumericalError(f"incomplete gamma series lost precision at a={a}, x={x}")
    return math.lgamma(a) + math.log1p(-p)


def _log_gamma_cf(a, x):
    # modified Lentz evaluation of the Legendre continued fraction
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise NumericalError(f"incomplete gamma continued fraction failed for a={a}, x={x}")
    return -x + a * math.log(x) + math.log(h)


def _scaled_e1(x):
    # E1(x) * e^x for 0 < x < 1 via the convergent power series
    total = 0.0
    term = 1.0
    for k in range(1, _MAX_TERMS):
        term *= -x / k
        contrib = term / k
        total += contrib
        if abs(contrib) < _EPS * max(abs(total), 1e-300):
            break
    e1 = -_EULER_GAMMA - math.log(x) - total
    return e1 * math.exp(x)


def _log_gamma_recurrence(a, x):
    # a <= 0, 0 < x < 1.  Work with R(a) = Gamma(a, x) e^x x^-a, for which the
    # downward recurrence reads R(a) = (x R(a + 1) - 1) / a and cannot overflow.
    if a == math.floor(a):
        start = 0.0
        r = _scaled_e1(x)
    else:
        start = a + math.floor(-a) + 1.0
        r = math.exp(_log_gamma_series(start, x) + x - start * math.log(x))
    steps = int(round(start - a))
    cur = start
    for _ in range(steps):
        cur -= 1.0
        r = (x * r - 1.0) / cur
    if not r > 0:
        raise NumericalError(f"incomplete gamma recurrence lost precision at a={a}, x={x}")
    return math.log(r) + a * math.log(x) - x


def log_upper_incomplete_gamma(a: float, x: float) -> float:
    """Natural log of Gamma(a, x) = int_x^inf t^(a-1) e^(-t) dt.

    ``a`` may be any real number; ``x`` must be positive.  Returns ``-inf``
    for ``x = inf``.
    """
    a = float(a)
    x = float(x)
    if not x > 0:
        raise DomainError(f"incomplete gamma needs x > 0, got {x}")
    if math.isinf(x):
        return -math.inf
    if x > a + 1.0 or (x >= 1.0 and a <= 1.0):
        return _log_gamma_cf(a, x)
    if abs(a - round(a)) < _INTEGER_SNAP and a < 0.5:
        a = float(round(a))
    if a > 0:
        return _log_gamma_series(a, x)
    return _log_gamma_recurrence(a, x)


def upper_incomplete_gamma(a: float, x: float) -> float:
    """Gamma(a, x) on the natural scale (may underflow to 0 for large x)."""
    return math.exp(log_upper_incomplete_gamma(a, x))


# ---------------------------------------------------------------------------
# Closed-form marginal likelihood without background
# ---------------------------------------------------------------------------

def _log_sub(la, lb):
    # log(exp(la) - exp(lb)) for la >= lb
    if lb == -math.inf:
        return la
    diff = lb - la
    if diff >= 0:
        return -math.inf
    return la + math.log(-math.expm1(diff))


def closed_form_loglik_nobg(params, Y, A) -> float:
    """Exact observed-data log-likelihood when every background is zero.

    Each source contributes the log of a sum over pieces of incomplete-gamma
    differences; the sum is taken with log-sum-exp.

    Raises
    ------
    NumericalError
        If the result is not finite.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    A = np.asarray(A, dtype=float).ravel()
    if Y.shape != A.shape:
        raise DomainError("Y and A must have the same length")
    if np.any(Y < 0) or np.any(Y != np.floor(Y)):
        raise DomainError("counts must be nonnegative integers")
    if np.any(A <= 0):
        raise DomainError("effective areas must be positive")

    beta = params.beta
    tau = params.tau
    log_c = params.log_survival_at_breaks
    upper = np.append(tau[1:], np.inf)
    total = 0.0
    for y, area in zip(Y, A):
        lg = math.lgamma(y + 1.0)
        terms = []
        for j in range(params.B):
            shape = y - beta[j]
            lo = log_upper_incomplete_gamma(shape, area * tau[j])
            hi = log_upper_incomplete_gamma(shape, area * upper[j])
            diff = _log_sub(lo, hi)
            terms.append(log_c[j] + math.log(beta[j]) + beta[j] * math.log(area * tau[j]) - lg + diff)
        terms = np.array(terms)
        top = terms.max()
        if not np.isfinite(top):
            raise NumericalError(f"non-finite likelihood term for count {int(y)}")
        total += top + math.log(np.exp(terms - top).sum())
    if not math.isfinite(total):
        raise NumericalError("closed-form log-likelihood is not finite")
    return float(total)


# ---------------------------------------------------------------------------
# Quadrature on an irregular grid
# ---------------------------------------------------------------------------

def integrate_grid(ts, fs) -> float:
    """Trapezoidal rule over a strictly increasing, possibly nonuniform grid."""
    ts = np.asarray(ts, dtype=float)
    fs = np.asarray(fs, dtype=float)
    if ts.ndim != 1 or fs.ndim != 1 or ts.size != fs.size:
        raise DomainError("ts and fs must be 1-D arrays of equal length")
    if ts.size < 2:
        raise DomainError("need at least two grid points")
    if np.any(np.diff(ts) <= 0):
        raise DomainError("grid must be strictly increasing")
    return float(np.sum(0.5 * np.diff(ts) * (fs[1:] + fs[:-1])))
