"""Choosing the number of Pareto pieces by AIC and BIC."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distribution import BrokenParetoParams
from .em import Dataset, EmConfig, iem_fit
from .errors import DomainError, FluxDistError
from .likelihood import PowerPosteriorConfig, power_posterior_loglik

log = logging.getLogger(__name__)

__all__ = ["criterion", "candidate_seeds", "CandidateResult", "SelectionReport", "select_b"]

KINDS = ("aic", "bic")


def criterion(loglik: float, B: int, n: int, kind: str) -> float:
    """Penalized deviance with 2B free parameters; smaller is better.

    AIC = -2 loglik + 4B, BIC = -2 loglik + 2B log n.
    """
    if B < 1 or n < 1:
        raise DomainError("need B >= 1 and n >= 1")
    kind = kind.lower()
    if kind == "aic":
        return -2.0 * loglik + 4.0 * B
    if kind == "bic":
        return -2.0 * loglik + 2.0 * B * math.log(n)
    raise DomainError(f"unknown criterion {kind!r}")


def candidate_seeds(seed: int, B: int) -> tuple[int, int]:
    """(EM seed, power-posterior seed) for candidate B, independent of b_max."""
    em_seed, pp_seed = np.random.SeedSequence([seed, B]).generate_state(2)
    return int(em_seed), int(pp_seed)


@dataclass
class CandidateResult:
    B: int
    theta_hat: BrokenParetoParams | None = None
    loglik: float = math.nan
    loglik_mc_se: float = math.nan
    aic: float = math.nan
    bic: float = math.nan
    converged: bool = False
    iterations: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        out = {"B": self.B, "loglik": self.loglik, "loglik_mc_se": self.loglik_mc_se,
               "aic": self.aic, "bic": self.bic, "converged": self.converged,
               "iterations": self.iterations, "error": self.error}
        if self.theta_hat is not None:
            out.update(self.theta_hat.to_dict())
        return out


@dataclass
class SelectionReport:
    """Per-candidate fits and the selected B under each criterion.

    ``close`` maps each criterion to the pairs (B, B') whose criterion values
    differ by no more than twice the Monte-Carlo standard error of that
    difference.
    """

    candidates: list
    b_hat_aic: int | None
    b_hat_bic: int | None
    n: int
    close: dict = field(default_factory=dict)

    def column(self, kind: str) -> np.ndarray:
        return np.array([getattr(c, kind) for c in self.candidates])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "b_hat_aic": self.b_hat_aic,
            "b_hat_bic": self.b_hat_bic,
            "candidates": [c.to_dict() for c in self.candidates],
            "statistically_close": {k: [list(p) for p in v] for k, v in self.close.items()},
        }


def _evaluate(args):
    data, B, em_cfg, pp_cfg, seed = args
    em_seed, pp_seed = candidate_seeds(seed, B)
    result = CandidateResult(B=B)
    try:
        fit = iem_fit(data, B, _with_seed(em_cfg, em_seed))
        result.theta_hat = fit.theta_hat
        result.converged = fit.converged
        result.iterations = fit.iterations
        est = power_posterior_loglik(fit.theta_hat, data, _with_seed(pp_cfg, pp_seed))
    except FluxDistError as err:
        log.warning("candidate B=%d failed: %s", B, err)
        result.error = f"{type(err).__name__}: {err}"
        return result
    result.loglik = est.value
    result.loglik_mc_se = est.mc_se
    result.aic = criterion(est.value, B, data.n, "aic")
    result.bic = criterion(est.value, B, data.n, "bic")
    return result


def _with_seed(cfg, seed):
    fields = dict(cfg.__dict__)
    fields["seed"] = seed
    return type(cfg)(**fields)


def _argmin(candidates, kind):
    ok = [c for c in candidates if c.ok]
    if not ok:
        return None
    return min(ok, key=lambda c: (getattr(c, kind), c.B)).B


def _close_pairs(candidates, kind):
    ok = [c for c in candidates if c.ok]
    pairs = []
    for i, a in enumerate(ok):
        for b in ok[i + 1:]:
            se = 2.0 * math.hypot(a.loglik_mc_se, b.loglik_mc_se)
            if abs(getattr(a, kind) - getattr(b, kind)) <= 2.0 * se:
                pairs.append((a.B, b.B))
    return pairs


def select_b(data: Dataset, b_max: int = 4, em_cfg: EmConfig = EmConfig(),
             pp_cfg: PowerPosteriorConfig = PowerPosteriorConfig(), seed: int = 0,
             workers: int = 1) -> SelectionReport:
    """Fit B = 1..b_max with IEM and compare AIC and BIC.

    Every candidate gets its own seeds derived from ``(seed, B)``, so adding
    candidates never changes earlier ones and the result does not depend on
    ``workers``.  A candidate whose fit or likelihood fails is kept in the
    report with its error message and excluded from the selection.
    """
    if b_max < 1:
        raise DomainError("b_max must be >= 1")
    jobs = [(data, B, em_cfg, pp_cfg, seed) for B in range(1, b_max + 1)]
    if workers > 1 and b_max > 1:
        with ProcessPoolExecutor(max_workers=min(workers, b_max)) as pool:
            candidates = list(pool.map(_evaluate, jobs))
    else:
        candidates = [_evaluate(job) for job in jobs]
    return SelectionReport(
        candidates=candidates,
        b_hat_aic=_argmin(candidates, "aic"),
        b_hat_bic=_argmin(candidates, "bic"),
        n=data.n,
        close={kind: _close_pairs(candidates, kind) for kind in KINDS},
    )
