"""Monte-Carlo EM for the Poisson / broken-Pareto hierarchical model.

Four fitters share one Metropolis-Hastings kernel:

* ``saem_fit``  - sufficient augmentation, latent fluxes S are the missing data
* ``aaem_fit``  - ancillary augmentation, U = F_B(S; theta) are the missing data
* ``aem_fit``   - strict alternation of SAEM and AAEM iterations
* ``iem_fit``   - interwoven EM: an SAEM update followed by an AAEM M-step on the
  same draws transformed to U-space

Every chain is run on the flux scale.  For a fixed theta the U-space chain with
uniform independence proposals is the image of the flux-space chain with
prior proposals under F_B, so both augmentations use the same kernel and only
differ in how the chain state is carried from one EM iteration to the next.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import distribution as dist
from .distribution import BrokenParetoParams
from .errors import DataError, DomainError, EmptySegmentError, FitError, ParameterError
from .numerics import SimplexConfig, nelder_mead

log = logging.getLogger(__name__)

__all__ = [
    "ObservedSource",
    "Dataset",
    "FluxSample",
    "EmConfig",
    "FitResult",
    "naive_fluxes",
    "poisson_logpmf",
    "mh_sweep_flux",
    "run_chain",
    "local_move_scale",
    "saem_fit",
    "aaem_fit",
    "aem_fit",
    "iem_fit",
    "impute_fluxes",
    "FITTERS",
]


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservedSource:
    """One detected source: photon count, effective area and background."""

    y: int
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.y < 0 or int(self.y) != self.y:
            raise DomainError(f"count must be a nonnegative integer, got {self.y}")
        if not self.a > 0:
            raise DomainError(f"effective area must be positive, got {self.a}")
        if not self.b >= 0:
            raise DomainError(f"background must be nonnegative, got {self.b}")


class Dataset:
    """Counts ``y``, effective areas ``a`` and backgrounds ``b`` for n sources.

    Stored column-wise; ``sources`` gives the per-source view.
    """

    def __init__(self, y, a, b=0.0):
        y = np.atleast_1d(np.asarray(y))
        a = np.broadcast_to(np.asarray(a, dtype=float), y.shape).copy()
        b = np.broadcast_to(np.asarray(b, dtype=float), y.shape).copy()
        if y.ndim != 1 or y.size == 0:
            raise DataError("dataset must contain at least one source")
        yf = y.astype(float)
        if np.any(yf < 0) or np.any(yf != np.floor(yf)):
            raise DataError("counts must be nonnegative integers")
        if np.any(~(a > 0)) or np.any(~np.isfinite(a)):
            raise DataError("effective areas must be positive and finite")
        if np.any(~(b >= 0)) or np.any(~np.isfinite(b)):
            raise DataError("backgrounds must be nonnegative and finite")
        self.y = yf.astype(np.int64)
        self.a = a
        self.b = b
        self._lgamma = gammaln(self.y + 1.0)

    @classmethod
    def from_sources(cls, sources):
        sources = list(sources)
        if not sources:
            raise DataError("dataset must contain at least one source")
        return cls([s.y for s in sources], [s.a for s in sources], [s.b for s in sources])

    @property
    def sources(self):
        return [ObservedSource(int(y), float(a), float(b)) for y, a, b in zip(self.y, self.a, self.b)]

    @property
    def n(self) -> int:
        return self.y.size

    def __len__(self):
        return self.n

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.y[index], self.a[index], self.b[index])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.y, other.y) and np.array_equal(self.a, other.a)
                and np.array_equal(self.b, other.b))

    def __repr__(self):
        return f"Dataset(n={self.n})"


def naive_fluxes(data: Dataset) -> np.ndarray:
    """Plug-in fluxes max(Y - b, 0.5) / A."""
    return np.maximum(data.y - data.b, 0.5) / data.a


def poisson_logpmf(y, mu, lgamma_y1=None):
    """log g(y; mu) with mu > 0."""
    if lgamma_y1 is None:
        lgamma_y1 = gammaln(np.asarray(y, dtype=float) + 1.0)
    return y * np.log(mu) - mu - lgamma_y1


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------

DEFAULT_SIMPLEX = SimplexConfig(x_tol=1e-5, f_tol=1e-10, max_iters=1500, initial_step=0.2)


@dataclass(frozen=True)
class EmConfig:
    """Monte-Carlo EM settings.

    ``theta_tol`` is compared with the average, over the last ``conv_window``
    iterations, of the largest relative change among the 2B coordinates of
    theta.  ``resample_u`` selects the IEM variant that draws fresh U values
    for the AAEM half-step instead of transforming the flux draws.
    """

    n_sim: int = 1000
    n_burn: int = 200
    n_limit: int = 200
    theta_tol: float = 1e-3
    seed: int = 0
    optimizer_cfg: SimplexConfig = DEFAULT_SIMPLEX
    conv_window: int = 3
    resample_u: bool = False

    def __post_init__(self):
        if self.n_burn < 0 or self.n_burn >= self.n_sim:
            raise DomainError("need 0 <= n_burn < n_sim")
        if self.n_limit < 1:
            raise DomainError("n_limit must be >= 1")
        if not self.theta_tol > 0:
            raise DomainError("theta_tol must be > 0")
        if self.conv_window < 1:
            raise DomainError("conv_window must be >= 1")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in
               ("n_sim", "n_burn", "n_limit", "theta_tol", "seed", "conv_window", "resample_u")}
        out["optimizer"] = dict(vars(self.optimizer_cfg))
        return out


@dataclass
class FluxSample:
    """Retained MH draws (rows) of the latent fluxes of every source (columns)."""

    s: np.ndarray
    accept_rate: np.ndarray

    @property
    def pooled(self) -> np.ndarray:
        return self.s.ravel()

    def posterior_mean(self) -> np.ndarray:
        return self.s.mean(axis=0)


@dataclass
class FitResult:
    """Output of an EM fitter.

    ``trajectory`` holds theta^(0), ..., theta^(iterations).  For IEM the
    intermediate SAEM iterates theta^(k+0.5) are kept in ``half_steps``.
    ``steps`` names the update that produced each trajectory entry after the
    first ("saem", "aaem" or "iem").
    """

    theta_hat: BrokenParetoParams
    trajectory: list
    converged: bool
    iterations: int
    final_accept_rates: np.ndarray
    algorithm: str = ""
    half_steps: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    final_sample: FluxSample | None = None
    slope_flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = self.theta_hat.to_dict()
        out.update(
            algorithm=self.algorithm,
            converged=bool(self.converged),
            iterations=int(self.iterations),
            near_equal_slopes=list(self.slope_flags),
            mean_accept_rate=float(np.mean(self.final_accept_rates)),
        )
        return out


# ---------------------------------------------------------------------------
# Metropolis-Hastings
# ---------------------------------------------------------------------------

def _mu(data, s):
    return data.a * s + data.b


def _loglik_terms(data, s):
    # Poisson log-pmf per source; s may be (n,) or (k, n)
    return poisson_logpmf(data.y, _mu(data, s), data._lgamma)


def _sweep_block(state, ll_state, proposals, ll_prop, log_u, t):
    accept = log_u < t * (ll_prop - ll_state)
    return (np.where(accept, proposals, state), np.where(accept, ll_prop, ll_state), accept)


def _draw_block(rng, n, theta, data, count):
    # one sweep uses n proposal uniforms then n acceptance uniforms
    u = rng.random((count, 2, data.n))
    proposals = dist._isf_from_log(np.log1p(-u[:, 0, :]), theta)
    with np.errstate(divide="ignore"):
        log_u = np.log(u[:, 1, :])
    return proposals, _loglik_terms(data, proposals), log_u


def mh_sweep_flux(current, theta: BrokenParetoParams, data: Dataset, rng, t: float = 1.0):
    """One systematic sweep of independence MH over every source.

    Each source proposes S* from the prior Pareto_B(theta) and accepts with
    probability min(1, [g(Y; A S* + b) / g(Y; A S + b)] ** t), evaluated on
    the log scale.  Sources are conditionally independent given theta, so the
    sweep is evaluated for all of them at once.
    """
    current = np.asarray(current, dtype=float)
    proposals, ll_prop, log_u = _draw_block(rng, data.n, theta, data, 1)
    new, _, _ = _sweep_block(current, _loglik_terms(data, current), proposals[0], ll_prop[0],
                             log_u[0], t)
    return new


def local_move_scale(data: Dataset, t: float) -> np.ndarray:
    """Step size on the log-flux scale for the optional random-walk move.

    Roughly 2.4 times the relative width of the tempered likelihood of each
    source, capped at 2.  Depends only on the data and t, never on the chain.
    """
    net = np.maximum(data.y - data.b, 1.0)
    with np.errstate(divide="ignore"):
        width = np.sqrt(np.maximum(data.y, 1.0)) / (math.sqrt(t) * net) if t > 0 else np.inf
    return np.minimum(2.0, 2.4 * width)


def _log_target_logscale(s, theta):
    # prior density of log S, -inf below tau_1
    inside = s >= theta.tau[0]
    safe = np.where(inside, s, theta.tau[0])
    ls, j = dist._log_survival(safe, theta)
    return np.where(inside, np.log(theta.beta_array[j]) + ls, -np.inf)


def _local_block(state, ll_state, lt_state, scale, z, log_u, theta, data, t):
    prop = state * np.exp(scale * z)
    lt_prop = _log_target_logscale(prop, theta)
    ll_prop = _loglik_terms(data, prop)
    with np.errstate(invalid="ignore"):
        accept = log_u < t * (ll_prop - ll_state) + (lt_prop - lt_state)
    return (np.where(accept, prop, state), np.where(accept, ll_prop, ll_state),
            np.where(accept, lt_prop, lt_state))


def run_chain(start, theta: BrokenParetoParams, data: Dataset, n_sim: int, n_burn: int, rng,
              t: float = 1.0, block: int = 256, local_scale=None):
    """Run ``n_sim`` sweeps from ``start`` and keep the draws after ``n_burn``.

    Returns the retained :class:`FluxSample` and the final state.  Sweep s
    consumes exactly the random numbers :func:`mh_sweep_flux` would, so the
    chain is identical to repeated single sweeps under the same generator.

    With ``local_scale`` (one step size per source) every independence sweep
    is followed by a random-walk MH move on log S.  Both moves leave the
    tempered posterior invariant; the second one lets bright sources, whose
    posterior is far narrower than the prior, move at all.  The random
    numbers for these moves are drawn after each block of sweeps.
    """
    state = np.asarray(start, dtype=float).copy()
    ll_state = _loglik_terms(data, state)
    local = local_scale is not None
    if local:
        scale = np.broadcast_to(np.asarray(local_scale, dtype=float), state.shape)
        lt_state = _log_target_logscale(state, theta)
    keep = np.empty((n_sim - n_burn, data.n))
    accepted = np.zeros(data.n)
    done = 0
    while done < n_sim:
        count = min(block, n_sim - done)
        proposals, ll_prop, log_u = _draw_block(rng, data.n, theta, data, count)
        if local:
            z = rng.standard_normal((count, data.n))
            with np.errstate(divide="ignore"):
                log_u_local = np.log(rng.random((count, data.n)))
        for i in range(count):
            state, ll_state, acc = _sweep_block(state, ll_state, proposals[i], ll_prop[i], log_u[i], t)
            if local:
                lt_state = np.where(acc, _log_target_logscale(state, theta), lt_state)
                state, ll_state, lt_state = _local_block(state, ll_state, lt_state, scale, z[i],
                                                         log_u_local[i], theta, data, t)
            sweep = done + i
            if sweep >= n_burn:
                keep[sweep - n_burn] = state
                accepted += acc
        done += count
    return FluxSample(s=keep, accept_rate=accepted / (n_sim - n_burn)), state


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------

def _theta_to_z(theta):
    gaps = np.diff(theta.tau_array)
    return np.concatenate([[math.log(theta.tau[0])], np.log(gaps), np.log(theta.beta_array)])


def _z_to_theta(z, B):
    tau = math.exp(z[0]) + np.concatenate([[0.0], np.cumsum(np.exp(z[1:B]))])
    return BrokenParetoParams(beta=np.exp(z[B:]), tau=tau, check_distinct=False)


def _aa_objective(log_v, data, B):
    # Monte-Carlo Q under the ancillary augmentation, up to a constant.
    # Draws are flattened and sorted by -log_v once, so that the pieces of
    # any theta are contiguous slices and no per-call search is needed.
    count, n = log_v.shape
    flat = -log_v.ravel()
    order = np.argsort(flat, kind="stable")
    neg_v = flat[order]
    src = np.tile(np.arange(n), count)[order]
    y, a, b = data.y[src].astype(float), data.a[src], data.b[src]

    def neg_q(z):
        if np.any(np.abs(z) > 700):
            return math.inf
        try:
            theta = _z_to_theta(z, B)
        except ParameterError:
            return math.inf
        lc = theta.log_survival_at_breaks
        cuts = np.searchsorted(neg_v, -lc[1:], side="left")
        bounds = np.concatenate(([0], cuts, [neg_v.size]))
        log_s = np.empty_like(neg_v)
        for j in range(B):
            lo, hi = bounds[j], bounds[j + 1]
            log_s[lo:hi] = theta.log_tau[j] + (lc[j] + neg_v[lo:hi]) / theta.beta_array[j]
        mu = a * np.exp(log_s) + b
        return -np.sum(y * np.log(mu) - mu) / count

    return neg_q


def aa_mstep(log_v, data: Dataset, start: BrokenParetoParams, cfg: SimplexConfig) -> BrokenParetoParams:
    """Maximize the ancillary-augmentation Monte-Carlo Q over theta.

    ``log_v`` holds log(1 - U) for the retained draws (rows) of every source.
    The search runs over (log tau_1, log tau gaps, log beta).
    """
    objective = _aa_objective(log_v, data, start.B)
    z, fz = nelder_mead(objective, _theta_to_z(start), cfg)
    if not math.isfinite(fz):
        raise FitError("AAEM M-step found no finite objective value", last_theta=start)
    return _z_to_theta(z, start.B)


def sa_mstep(sample: FluxSample, B: int, cfg: SimplexConfig) -> BrokenParetoParams:
    """Complete-data MLE on the pooled retained flux draws."""
    try:
        return dist.complete_mle(sample.pooled, B, cfg)
    except (EmptySegmentError, FitError) as err:
        raise FitError(f"SAEM M-step failed: {err}") from err


# ---------------------------------------------------------------------------
# Fitters
# ---------------------------------------------------------------------------

def _relative_change(new, old):
    a, b = new.as_vector(), old.as_vector()
    return float(np.max(np.abs(a - b) / np.abs(b)))


def _initial_theta(data, B, theta0):
    if theta0 is not None:
        if theta0.B != B:
            raise FitError(f"theta0 has {theta0.B} pieces, expected {B}")
        return theta0
    try:
        return dist.complete_mle(naive_fluxes(data), B)
    except (EmptySegmentError, FitError) as err:
        raise FitError(f"cannot initialize a {B}-piece fit: {err}") from err


def _log_survival(s, theta):
    ls, _ = dist._log_survival(s, theta)
    return ls


class _ChainState:
    """Last flux draw of every source and the theta it was drawn under."""

    def __init__(self, data, theta):
        self.s = np.maximum(naive_fluxes(data), theta.tau[0])
        self.theta = theta

    def start_sa(self, theta):
        # sufficient augmentation: keep the fluxes, clamped into the new support
        return np.maximum(self.s, theta.tau[0])

    def start_aa(self, theta):
        # ancillary augmentation: keep U = F(S; old theta) and map it through the new theta
        return dist._isf_from_log(_log_survival(self.s, self.theta), theta)

    def update(self, s, theta):
        self.s = s
        self.theta = theta


def _fit(data: Dataset, B: int, cfg: EmConfig, schedule, name, theta0=None) -> FitResult:
    if B < 1:
        raise FitError("B must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    theta = _initial_theta(data, B, theta0)
    trajectory = [theta]
    half_steps, steps, changes = [], [], []
    chain = _ChainState(data, theta)
    sample = None
    converged = False
    opt = cfg.optimizer_cfg

    for k in range(cfg.n_limit):
        kind = schedule(k)
        try:
            if kind == "aaem":
                start = chain.start_aa(theta)
            else:
                start = chain.start_sa(theta)
            sample, last = run_chain(start, theta, data, cfg.n_sim, cfg.n_burn, rng)
            chain.update(last, theta)

            if kind == "saem":
                new = sa_mstep(sample, B, opt)
            elif kind == "aaem":
                new = aa_mstep(_log_survival(sample.s, theta), data, theta, opt)
            else:
                half = sa_mstep(sample, B, opt)
                half_steps.append(half)
                if cfg.resample_u:
                    fresh, _ = run_chain(chain.start_aa(half), half, data, cfg.n_sim, cfg.n_burn, rng)
                    log_v = _log_survival(fresh.s, half)
                else:
                    log_v = _log_survival(sample.s, half)
                new = aa_mstep(log_v, data, half, opt)
        except FitError as err:
            raise FitError(f"{name} iteration {k + 1}: {err}", last_theta=theta) from err

        changes.append(_relative_change(new, theta))
        theta = new
        trajectory.append(theta)
        steps.append(kind)
        log.debug("%s iter %d (%s): beta=%s tau=%s", name, k + 1, kind, theta.beta, theta.tau)
        if len(changes) >= cfg.conv_window and np.mean(changes[-cfg.conv_window:]) < cfg.theta_tol:
            converged = True
            break

    return FitResult(
        theta_hat=theta,
        trajectory=trajectory,
        converged=converged,
        iterations=len(trajectory) - 1,
        final_accept_rates=sample.accept_rate,
        algorithm=name,
        half_steps=half_steps,
        steps=steps,
        final_sample=sample,
        slope_flags=dist.near_equal_slopes(theta),
    )


def saem_fit(data: Dataset, B: int, cfg: EmConfig = EmConfig(), theta0=None) -> FitResult:
    """EM with the sufficient augmentation (latent fluxes as missing data)."""
    return _fit(data, B, cfg, lambda k: "saem", "saem", theta0)


def aaem_fit(data: Dataset, B: int, cfg: EmConfig = EmConfig(), theta0=None) -> FitResult:
    """EM with the ancillary augmentation U = F_B(S; theta)."""
    return _fit(data, B, cfg, lambda k: "aaem", "aaem", theta0)


def aem_fit(data: Dataset, B: int, cfg: EmConfig = EmConfig(), theta0=None) -> FitResult:
    """Alternating EM: SAEM on odd iterations, AAEM on even ones."""
    return _fit(data, B, cfg, lambda k: "saem" if k % 2 == 0 else "aaem", "aem", theta0)


def iem_fit(data: Dataset, B: int, cfg: EmConfig = EmConfig(), theta0=None) -> FitResult:
    """Interwoven EM.

    Each iteration runs the SAEM E- and M-step to get theta^(k+0.5), maps the
    same retained flux draws to U = F_B(S; theta^(k+0.5)) and finishes with
    the AAEM M-step.
    """
    return _fit(data, B, cfg, lambda k: "iem", "iem", theta0)


FITTERS = {"saem": saem_fit, "aaem": aaem_fit, "aem": aem_fit, "iem": iem_fit}


def impute_fluxes(data: Dataset, theta: BrokenParetoParams, cfg: EmConfig = EmConfig(),
                  mode: str = "mean") -> np.ndarray:
    """Fluxes from one E-step at ``theta``: posterior means or the last draw."""
    if mode not in ("mean", "draw"):
        raise DomainError(f"unknown imputation mode {mode!r}")
    rng = np.random.default_rng(cfg.seed)
    start = np.maximum(naive_fluxes(data), theta.tau[0])
    sample, last = run_chain(start, theta, data, cfg.n_sim, cfg.n_burn, rng)
    return sample.posterior_mean() if mode == "mean" else last
