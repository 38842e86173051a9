import math

import numpy as np
import pytest
from scipy import integrate

from fluxdist.distribution import BrokenParetoParams


@pytest.fixture
def rng():
    return np.random.default_rng(20140501)


PARAM_SETS = {
    1: BrokenParetoParams(beta=[1.0], tau=[5e-17]),
    2: BrokenParetoParams(beta=[0.5, 3.0], tau=[1e-17, 5e-17]),
    3: BrokenParetoParams(beta=[0.3, 1.0, 3.0], tau=[1e-17, 8e-17, 1.8e-16]),
}


@pytest.fixture(params=sorted(PARAM_SETS), ids=lambda b: f"B{b}")
def params(request):
    return PARAM_SETS[request.param]


def marginal_by_quadrature(y, area, background, params):
    """log of int pois(y; area*s + background) f_B(s) ds by adaptive quadrature.

    Written against the textbook formulas only (no package code), in the
    scaled variable t = area * s.
    """
    beta = list(params.beta)
    tau = list(params.tau)
    consts = [1.0]
    for j in range(1, len(beta)):
        consts.append(consts[-1] * (tau[j - 1] / tau[j]) ** beta[j - 1])

    def density(s):
        j = max(k for k in range(len(tau)) if s >= tau[k])
        return beta[j] * consts[j] * tau[j] ** beta[j] * s ** (-beta[j] - 1.0)

    lg = math.lgamma(y + 1.0)
    mode = max(y - background, 1.0)
    # scale out the peak of the Poisson factor so quad sees O(1) values
    log_peak = y * math.log(mode + background) - (mode + background) - lg

    def integrand(t):
        mu = t + background
        return math.exp(y * math.log(mu) - mu - lg - log_peak) * density(t / area) / area

    lo = area * tau[0]
    edges = sorted({lo, *[area * t for t in tau], max(lo, mode)})
    edges = [e for e in edges if e >= lo]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        if b > a:
            total += integrate.quad(integrand, a, b, epsabs=0, epsrel=1e-12, limit=400)[0]
    total += integrate.quad(integrand, edges[-1], np.inf, epsabs=0, epsrel=1e-12, limit=400)[0]
    return math.log(total) + log_peak
