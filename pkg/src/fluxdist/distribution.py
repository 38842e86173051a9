"""The B-piece (broken) Pareto distribution and its complete-data MLE.

The survival function is

    S(x) = C_j * (tau_j / x) ** beta_j     for tau_j <= x < tau_{j+1}

with C_1 = 1 and C_{j+1} = C_j * (tau_j / tau_{j+1}) ** beta_j, which makes
S continuous at every breakpoint.  All evaluation is done on the log scale
because fluxes are of order 1e-17.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, EmptySegmentError, FitError, ParameterError
from .numerics import SimplexConfig, nelder_mead

__all__ = [
    "BrokenParetoParams",
    "SegmentCounts",
    "survival",
    "cdf",
    "pdf",
    "logpdf",
    "quantile",
    "isf",
    "sample",
    "segment_counts",
    "beta_given_tau",
    "profile_loglik",
    "complete_loglik",
    "complete_mle",
    "near_equal_slopes",
]

#: Absolute slope gap under which adjacent pieces are flagged as degenerate.
SLOPE_FLAG_TOL = 1e-3


@dataclass(frozen=True)
class BrokenParetoParams:
    """Slopes ``beta`` and breakpoints ``tau`` of a B-piece Pareto law.

    Set ``check_distinct=False`` to skip the requirement that adjacent
    slopes differ; estimators construct parameters this way.
    """

    beta: tuple
    tau: tuple
    check_distinct: bool = True

    def __post_init__(self):
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        tau = tuple(float(t) for t in np.atleast_1d(self.tau))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "tau", tau)
        if len(beta) == 0 or len(beta) != len(tau):
            raise ParameterError("beta and tau must be non-empty and of equal length")
        if not all(math.isfinite(b) and b > 0 for b in beta):
            raise ParameterError(f"slopes must be finite and positive, got {beta}")
        if not all(math.isfinite(t) for t in tau) or tau[0] <= 0:
            raise ParameterError(f"breakpoints must be finite and positive, got {tau}")
        if any(t1 >= t2 for t1, t2 in zip(tau, tau[1:])):
            raise ParameterError(f"breakpoints must be strictly increasing, got {tau}")
        if self.check_distinct and any(b1 == b2 for b1, b2 in zip(beta, beta[1:])):
            raise ParameterError("adjacent slopes must differ")

    @property
    def B(self) -> int:
        return len(self.beta)

    @cached_property
    def beta_array(self) -> np.ndarray:
        return np.array(self.beta)

    @cached_property
    def tau_array(self) -> np.ndarray:
        return np.array(self.tau)

    @cached_property
    def log_tau(self) -> np.ndarray:
        return np.log(self.tau_array)

    @cached_property
    def log_survival_at_breaks(self) -> np.ndarray:
        """log S(tau_j) for j = 1..B."""
        out = np.zeros(self.B)
        for j in range(1, self.B):
            out[j] = out[j - 1] + self.beta[j - 1] * (self.log_tau[j - 1] - self.log_tau[j])
        return out

    # conventions used by the likelihood displays
    @property
    def beta0(self) -> float:
        return 0.0

    @property
    def tau0(self) -> float:
        return self.tau[0]

    @property
    def tau_upper(self) -> float:
        return math.inf

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta_array, self.tau_array])

    def to_dict(self) -> dict:
        return {
            "beta": list(self.beta),
            "tau": list(self.tau),
            "log10_tau": [math.log10(t) for t in self.tau],
        }

    def __eq__(self, other):
        if not isinstance(other, BrokenParetoParams):
            return NotImplemented
        return self.beta == other.beta and self.tau == other.tau

    def __hash__(self):
        return hash((self.beta, self.tau))


def _segment_index(params, x):
    # index of the piece containing x; -1 below tau_1
    return np.searchsorted(params.tau_array, x, side="right") - 1


def _log_survival(x, params):
    x = np.asarray(x, dtype=float)
    j = _segment_index(params, x)
    jj = np.clip(j, 0, None)
    with np.errstate(divide="ignore"):
        logx = np.log(x)
    out = params.log_survival_at_breaks[jj] + params.beta_array[jj] * (params.log_tau[jj] - logx)
    return np.where(j < 0, 0.0, out), j


def _check_flux(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("flux values must be positive")
    return x


def survival(x, params: BrokenParetoParams):
    """P(X > x); equal to 1 below tau_1."""
    x = _check_flux(x)
    ls, _ = _log_survival(x, params)
    return np.exp(ls)


def cdf(x, params: BrokenParetoParams):
    x = _check_flux(x)
    ls, _ = _log_survival(x, params)
    return -np.expm1(ls)


def logpdf(x, params: BrokenParetoParams):
    x = _check_flux(x)
    ls, j = _log_survival(x, params)
    jj = np.clip(j, 0, None)
    out = np.log(params.beta_array[jj]) + ls - np.log(x)
    return np.where(j < 0, -np.inf, out)


def pdf(x, params: BrokenParetoParams):
    """Density: beta_j * S(x) / x on piece j, zero below tau_1."""
    return np.exp(logpdf(x, params))


def _isf_from_log(log_s, params):
    # inverse of the log-survival function, log_s <= 0
    lc = params.log_survival_at_breaks
    # piece j holds log S in (lc[j+1], lc[j]]
    j = np.searchsorted(-lc, -log_s, side="right") - 1
    j = np.clip(j, 0, params.B - 1)
    return np.exp(params.log_tau[j] + (lc[j] - log_s) / params.beta_array[j])


def isf(s, params: BrokenParetoParams):
    """Inverse survival function for s in (0, 1]."""
    s = np.asarray(s, dtype=float)
    if np.any(~((s > 0) & (s <= 1))):
        raise DomainError("survival probabilities must lie in (0, 1]")
    return _isf_from_log(np.log(s), params)


def quantile(u, params: BrokenParetoParams):
    """Inverse CDF, exact and piecewise closed form."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("probabilities must lie in (0, 1)")
    return _isf_from_log(np.log1p(-u), params)


def sample(n: int, params: BrokenParetoParams, rng) -> np.ndarray:
    """Draw ``n`` i.i.d. fluxes by inverting the CDF at uniforms from ``rng``."""
    if n < 1:
        raise DomainError("sample size must be >= 1")
    u = rng.random(n)
    return _isf_from_log(np.log1p(-u), params)


# ---------------------------------------------------------------------------
# Complete-data likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentCounts:
    """Per-piece counts of a sample for a breakpoint vector.

    ``n[j]`` counts observations >= tau_j, ``m[j] = n[j] - n[j+1]`` the
    observations in piece j and ``segment_logsums[j]`` the sum of their logs.
    """

    n: np.ndarray
    m: np.ndarray
    segment_logsums: np.ndarray


class _SortedSample:
    """Sorted sample with prefix sums, so that segment statistics for any
    breakpoint vector cost O(B log N)."""

    def __init__(self, x):
        x = np.sort(np.asarray(x, dtype=float).ravel())
        if x.size == 0:
            raise DomainError("sample is empty")
        if not x[0] > 0:
            raise DomainError("flux values must be positive")
        self.x = x
        self.size = x.size
        self.log_ref = math.log(x[0])
        shifted = np.log(x) - self.log_ref
        self.cum_log = np.concatenate([[0.0], np.cumsum(shifted)])
        self.sum_log = float(np.sum(np.log(x)))
        change = np.ones(x.size, dtype=np.int64)
        change[1:] = x[1:] != x[:-1]
        self.cum_change = np.concatenate([[0], np.cumsum(change)])

    def edges(self, tau):
        idx = np.searchsorted(self.x, tau, side="left")
        return np.append(idx, self.size)

    def counts(self, tau):
        edges = self.edges(tau)
        n = self.size - edges[:-1]
        m = edges[1:] - edges[:-1]
        shifted = self.cum_log[edges[1:]] - self.cum_log[edges[:-1]]
        return edges, n, m, shifted

    def distinct(self, edges):
        lo, hi = edges[:-1], edges[1:]
        inner = self.cum_change[np.maximum(hi, lo + 1)] - self.cum_change[np.minimum(lo + 1, hi)]
        return np.where(hi > lo, 1 + inner, 0)


def _as_sorted(x):
    return x if isinstance(x, _SortedSample) else _SortedSample(x)


def segment_counts(x, tau) -> SegmentCounts:
    s = _as_sorted(x)
    tau = np.asarray(tau, dtype=float)
    edges, n, m, shifted = s.counts(tau)
    return SegmentCounts(n=n, m=m, segment_logsums=shifted + m * s.log_ref)


def _denominators(s, tau, n, m, shifted):
    # sum_{A_j} log X_i + n_{j+1} log tau_{j+1} - n_j log tau_j, evaluated
    # relative to log(min X) to keep the magnitudes small
    log_tau = np.log(tau) - s.log_ref
    n_next = np.append(n[1:], 0)
    log_tau_next = np.append(log_tau[1:], 0.0)
    return shifted + n_next * log_tau_next - n * log_tau


def beta_given_tau(counts: SegmentCounts, tau) -> np.ndarray:
    """Slopes maximizing the complete-data likelihood at fixed breakpoints.

    Raises
    ------
    EmptySegmentError
        If a piece holds no observations or its denominator is degenerate.
    """
    tau = np.asarray(tau, dtype=float)
    n = np.asarray(counts.n)
    m = np.asarray(counts.m)
    if np.any(m < 1):
        raise EmptySegmentError(f"empty segment(s): {np.flatnonzero(m < 1).tolist()}")
    log_tau = np.log(tau)
    n_next = np.append(n[1:], 0)
    log_tau_next = np.append(log_tau[1:], 0.0)
    denom = counts.segment_logsums + n_next * log_tau_next - n * log_tau
    if np.any(~(denom > 0)):
        raise EmptySegmentError("degenerate segment: all observations sit on its breakpoint")
    return m / denom


def _profile(s: _SortedSample, tau, min_distinct=1):
    tau = np.asarray(tau, dtype=float)
    if tau[0] > s.x[0] or np.any(np.diff(tau) <= 0):
        return -math.inf
    edges, n, m, shifted = s.counts(tau)
    if np.any(m < 1):
        return -math.inf
    if min_distinct > 1 and np.any(s.distinct(edges) < min_distinct):
        return -math.inf
    denom = _denominators(s, tau, n, m, shifted)
    if np.any(~(denom > 0)):
        return -math.inf
    beta = m / denom
    return float(-s.size - s.sum_log + np.sum(m * np.log(beta)))


def profile_loglik(x, tau) -> float:
    """Complete-data log-likelihood maximized over slopes at fixed ``tau``.

    Returns ``-inf`` when a piece is empty, when tau_1 exceeds min(x), or
    when ``tau`` is not strictly increasing.
    """
    return _profile(_as_sorted(x), tau)


def complete_loglik(x, params: BrokenParetoParams) -> float:
    """sum_i log f_B(x_i) for an i.i.d. sample."""
    x = _check_flux(x)
    return float(np.sum(logpdf(x, params)))


def _gaps_to_tau(tau1, gamma):
    return tau1 + np.concatenate([[0.0], np.cumsum(np.exp(gamma))])


def complete_mle(x, B: int, optimizer_cfg: SimplexConfig | None = None,
                 min_distinct: int = 2) -> BrokenParetoParams:
    """Maximum likelihood fit of a B-piece Pareto law to an observed sample.

    tau_1 is the sample minimum.  The remaining breakpoints maximize
    :func:`profile_loglik` with Nelder-Mead over the log-gaps
    ``log(tau_{j+1} - tau_j)``, restarted from several empirical-quantile
    placements; the slopes follow in closed form.

    Pieces holding fewer than ``min_distinct`` distinct values are treated
    as infeasible: a piece squeezed around a single value has an unbounded
    likelihood.
    """
    s = _as_sorted(x)
    if B < 1:
        raise FitError("B must be >= 1")
    if s.size < 2 * B:
        raise FitError(f"need at least {2 * B} observations for B={B}, got {s.size}")
    tau1 = float(s.x[0])

    if B == 1:
        # input order, so the sum matches n / sum(log(x / min x)) bit for bit
        xs = s.x if isinstance(x, _SortedSample) else np.asarray(x, dtype=float).ravel()
        denom = np.sum(np.log(xs / tau1))
        if not denom > 0:
            raise FitError("all observations are tied; slope is undefined")
        return BrokenParetoParams(beta=[xs.size / denom], tau=[tau1], check_distinct=False)

    cfg = optimizer_cfg or SimplexConfig(x_tol=1e-6, f_tol=1e-9, max_iters=1500, initial_step=0.5)

    def objective(gamma):
        return -_profile(s, _gaps_to_tau(tau1, gamma), min_distinct)

    best_val, best_tau = math.inf, None
    for power in (1.0, 0.5, 0.75, 1.5, 2.0):
        levels = (np.arange(1, B) / B) ** power
        start_tau = np.concatenate([[tau1], np.quantile(s.x, levels)])
        gaps = np.diff(start_tau)
        if np.any(~(gaps > 0)):
            # ties at the quantiles: spread the starts geometrically instead
            span = max(s.x[-1] - tau1, tau1)
            gaps = span * levels / B
        xopt, fopt = nelder_mead(objective, np.log(gaps), cfg)
        if fopt < best_val:
            best_val, best_tau = fopt, _gaps_to_tau(tau1, xopt)

    if best_tau is None or not math.isfinite(best_val):
        raise FitError(f"no feasible breakpoint configuration for B={B}")
    edges, n, m, shifted = s.counts(best_tau)
    beta = m / _denominators(s, best_tau, n, m, shifted)
    return BrokenParetoParams(beta=beta, tau=best_tau, check_distinct=False)


def near_equal_slopes(params: BrokenParetoParams, tol: float = SLOPE_FLAG_TOL) -> list:
    """Indices j (0-based) where |beta_j - beta_{j+1}| < tol."""
    b = params.beta
    return [j for j in range(len(b) - 1) if abs(b[j] - b[j + 1]) < tol]
