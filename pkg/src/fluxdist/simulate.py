"""Synthetic data from the hierarchical model and log N - log S curves."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import distribution as dist
from .distribution import BrokenParetoParams
from .em import Dataset
from .errors import DomainError

__all__ = ["SimSetting", "PRESETS", "preset", "generate", "lognlogs_curve", "lognlogs_overlay"]


@dataclass(frozen=True)
class SimSetting:
    """Population parameters, sample size, exposure and background."""

    params: BrokenParetoParams
    n: int
    a: object = 1e19
    b: object = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be >= 1")

    def with_seed(self, seed: int) -> "SimSetting":
        return SimSetting(self.params, self.n, self.a, self.b, seed)

    def to_dict(self) -> dict:
        def _plain(v):
            arr = np.asarray(v, dtype=float)
            return float(arr) if arr.ndim == 0 else arr.tolist()

        return {**self.params.to_dict(), "n": self.n, "a": _plain(self.a),
                "b": _plain(self.b), "seed": self.seed}


# the four simulation designs, all with A_i = 1e19 and b_i = 10
PRESETS = {
    "setting1": SimSetting(BrokenParetoParams([1.0], [5e-17]), n=100),
    "setting2": SimSetting(BrokenParetoParams([0.5, 3.0], [1e-17, 5e-17]), n=200),
    "setting3": SimSetting(BrokenParetoParams([0.5, 1.5], [1e-17, 5e-17]), n=200),
    "setting4": SimSetting(BrokenParetoParams([0.3, 1.0, 3.0], [1e-17, 8e-17, 1.8e-16]), n=500),
}


def preset(name: str, seed: int = 0) -> SimSetting:
    try:
        return PRESETS[name].with_seed(seed)
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def generate(setting: SimSetting):
    """Draw fluxes from the population and Poisson counts given the fluxes.

    Returns ``(dataset, fluxes)``; the latent fluxes are meant for tests and
    oracle comparisons only.
    """
    rng = np.random.default_rng(setting.seed)
    s = dist.sample(setting.n, setting.params, rng)
    a = np.broadcast_to(np.asarray(setting.a, dtype=float), s.shape)
    b = np.broadcast_to(np.asarray(setting.b, dtype=float), s.shape)
    y = rng.poisson(a * s + b)
    return Dataset(y, a, b), s


def lognlogs_curve(fluxes) -> np.ndarray:
    """Empirical log10 N(>S) against log10 S.

    Fluxes are sorted in decreasing order; the i-th brightest (1-based) gives
    the point (log10 S_(i), log10 i).  Returns an (n, 2) array.
    """
    s = np.asarray(fluxes, dtype=float).ravel()
    if s.size == 0:
        raise DomainError("need at least one flux")
    if np.any(~(s > 0)):
        raise DomainError("fluxes must be positive")
    s = np.sort(s)[::-1]
    return np.column_stack([np.log10(s), np.log10(np.arange(1, s.size + 1))])


def lognlogs_overlay(params: BrokenParetoParams, n: int, s_max: float) -> list:
    """Fitted piecewise-linear log N - log S, one segment per piece.

    N(>S) = n * S_B(S), so piece j is the line
    log10 N = log10(alpha_j) - beta_j log10 S with the intercepts fixed by
    continuity and N(>tau_1) = n.  Each entry is a dict with the segment end
    points, its slope and its intercept log10(alpha_j).
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    ends = list(params.tau[1:]) + [max(s_max, params.tau[-1] * 1.0001)]
    segments = []
    for j in range(params.B):
        x0, x1 = params.tau[j], ends[j]
        log_alpha = (math.log10(n) + params.log_survival_at_breaks[j] / math.log(10)
                     + params.beta[j] * math.log10(params.tau[j]))
        line = lambda x: log_alpha - params.beta[j] * math.log10(x)
        segments.append({
            "piece": j + 1,
            "log10_s_start": math.log10(x0),
            "log10_s_end": math.log10(x1),
            "log10_n_start": line(x0),
            "log10_n_end": line(x1),
            "slope": -params.beta[j],
            "log10_alpha": log_alpha,
        })
    return segments
