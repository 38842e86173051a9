"""Bootstrap standard errors for fitted broken power laws."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .distribution import BrokenParetoParams
from .em import Dataset, EmConfig, iem_fit
from .errors import BootstrapError, DomainError, FluxDistError

log = logging.getLogger(__name__)

__all__ = ["BootstrapReport", "bootstrap_se", "replicate_indices", "parameter_names"]


def parameter_names(B: int) -> list:
    return [f"beta_{j}" for j in range(1, B + 1)] + [f"log10_tau_{j}" for j in range(1, B + 1)]


@dataclass
class BootstrapReport:
    """Refitted parameters per replicate and their standard deviations.

    Columns of ``replicates`` are (beta_1..beta_B, log10 tau_1..log10 tau_B);
    rows of failed replicates are NaN.  ``se`` is computed over the
    successful rows only.  ``not_converged`` counts successful replicates
    whose EM stopped at the iteration limit.
    """

    estimate: np.ndarray
    replicates: np.ndarray
    se: np.ndarray
    failures: int
    not_converged: int
    seed: int

    @property
    def B(self) -> int:
        return self.estimate.size // 2

    @property
    def n_boot(self) -> int:
        return self.replicates.shape[0]

    def to_dict(self) -> dict:
        rows = [{"parameter": name, "estimate": float(est), "se": float(se)}
                for name, est, se in zip(parameter_names(self.B), self.estimate, self.se)]
        return {"B": self.B, "n_boot": self.n_boot, "failures": self.failures,
                "not_converged": self.not_converged, "seed": self.seed, "parameters": rows}


def _as_row(theta: BrokenParetoParams) -> np.ndarray:
    return np.concatenate([theta.beta_array, np.log10(theta.tau_array)])


def replicate_indices(seed: int, r: int, n: int) -> np.ndarray:
    """Source indices drawn with replacement for replicate ``r``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, r, 0]))
    return rng.integers(0, n, size=n)


def _replicate_em_seed(seed, r):
    return int(np.random.SeedSequence([seed, r, 1]).generate_state(1)[0])


def _one(args):
    data, B, cfg, theta0, seed, r = args
    rep = data.subset(replicate_indices(seed, r, data.n))
    fields = dict(cfg.__dict__)
    fields["seed"] = _replicate_em_seed(seed, r)
    try:
        fit = iem_fit(rep, B, EmConfig(**fields), theta0=theta0)
    except FluxDistError as err:
        log.warning("bootstrap replicate %d failed: %s", r, err)
        return None, False
    return _as_row(fit.theta_hat), fit.converged


def bootstrap_se(data: Dataset, B: int, n_boot: int = 200, em_cfg: EmConfig = EmConfig(),
                 seed: int = 0, theta_hat: BrokenParetoParams | None = None,
                 workers: int = 1) -> BootstrapReport:
    """Case-resampling bootstrap of the IEM estimate.

    Each replicate draws n sources with replacement, keeping every
    (y, a, b) triple together, and refits with IEM started at the
    full-data estimate.  ``theta_hat`` is fitted with ``em_cfg`` when not
    given.  Replicate seeds depend only on ``(seed, r)``, so the report does
    not depend on ``workers``.

    Raises
    ------
    BootstrapError
        If every replicate fails.
    """
    if n_boot < 2:
        raise DomainError("n_boot must be >= 2")
    if theta_hat is None:
        theta_hat = iem_fit(data, B, em_cfg).theta_hat
    elif theta_hat.B != B:
        raise DomainError(f"theta_hat has {theta_hat.B} pieces, expected {B}")
    jobs = [(data, B, em_cfg, theta_hat, seed, r) for r in range(n_boot)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs, chunksize=max(1, n_boot // (4 * workers))))
    else:
        results = [_one(job) for job in jobs]

    reps = np.full((n_boot, 2 * B), math.nan)
    not_converged = 0
    for r, (row, converged) in enumerate(results):
        if row is not None:
            reps[r] = row
            not_converged += not converged
    ok = ~np.isnan(reps[:, 0])
    failures = int(n_boot - ok.sum())
    if failures == n_boot:
        raise BootstrapError(f"all {n_boot} bootstrap replicates failed")
    se = reps[ok].std(axis=0, ddof=1) if ok.sum() > 1 else np.zeros(2 * B)
    return BootstrapReport(estimate=_as_row(theta_hat), replicates=reps, se=se,
                           failures=failures, not_converged=int(not_converged), seed=seed)
