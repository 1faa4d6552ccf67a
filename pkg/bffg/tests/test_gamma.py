# tests/test_gamma.py
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import gamma as gamma_dist

from bffg.engine.likelihood import estimate_likelihood
from bffg.engine.passes import run_backward
from bffg.errors import DomainError, FamilyMismatchError
from bffg.graph.model import DirectedGraphModel, Edge
from bffg.potentials.gamma import (
    GammaKernel, GammaPotential, expbeta_sample, gamma_guided_sample, gamma_log_weight, gamma_pullback,
)

RATE = 1.5


def sine_rate(x):
    return RATE * (1.0 + 0.5 * math.sin(x))


def line_model(rate=None, method='quadrature'):
    """0 -> 1 -> 2 (observed at 3.0), increments Gamma(1.5, .) then Gamma(2, .)."""
    edges = [
        Edge(0, 1, GammaKernel(1.5, RATE, rate=rate, weight_method=method)),
        Edge(1, 2, GammaKernel(2.0, RATE, rate=rate, weight_method=method)),
    ]
    return DirectedGraphModel(3, 0, 0.0, edges, {2: 3.0})


def test_pullback_adds_shapes():
    g = GammaPotential(A=2.0, rate=RATE, anchor=4.0)
    pulled = gamma_pullback(GammaKernel(1.5, RATE), g)
    assert (pulled.A, pulled.rate, pulled.anchor) == (3.5, RATE, 4.0)


def test_pullback_rejects_rate_mismatch():
    with pytest.raises(FamilyMismatchError):
        gamma_pullback(GammaKernel(1.0, 2.0), GammaPotential(A=1.0, rate=RATE, anchor=1.0))


def test_constant_rate_root_value_is_the_summed_gamma_density():
    bp = run_backward(line_model())
    assert bp.log_root_value == pytest.approx(gamma_dist.logpdf(3.0, 3.5, scale=1 / RATE), abs=1e-12)


def test_expbeta_without_tilt_is_beta():
    draws = expbeta_sample(2.0, 3.0, 0.0, np.random.default_rng(1), size=4000)
    assert abs(draws.mean() - 0.4) < 4 * draws.std() / math.sqrt(4000)


def test_expbeta_mean_matches_quadrature():
    a, b, lam = 1.5, 2.5, 3.0
    density = lambda z: z ** (a - 1) * (1 - z) ** (b - 1) * math.exp(-lam * z)
    norm = integrate.quad(density, 0, 1)[0]
    mean = integrate.quad(lambda z: z * density(z), 0, 1)[0] / norm
    draws = expbeta_sample(a, b, lam, np.random.default_rng(2), size=4000)
    assert abs(draws.mean() - mean) < 4 * draws.std() / math.sqrt(4000)


def test_guided_sample_stays_below_the_anchor():
    k = GammaKernel(1.5, RATE, rate=sine_rate)
    g = GammaPotential(A=2.0, rate=RATE, anchor=3.0)
    rng = np.random.default_rng(3)
    for _ in range(200):
        assert 0.5 < gamma_guided_sample(k, g, 0.5, rng) < 3.0


def test_guided_sample_past_anchor_raises_domain_error():
    with pytest.raises(DomainError):
        gamma_guided_sample(GammaKernel(1.0, RATE), GammaPotential(1.0, RATE, 1.0), 2.0, np.random.default_rng(0))


def test_quadrature_weight_matches_direct_integration():
    """Weight equals (integral of g against the true kernel) / (aux pullback)."""
    k = GammaKernel(1.5, RATE, rate=sine_rate)
    g = GammaPotential(A=2.0, rate=RATE, anchor=3.0)
    x = 0.4
    forward = integrate.quad(
        lambda y: gamma_dist.pdf(y - x, 1.5, scale=1 / sine_rate(x)) * math.exp(g.log_value(y)), x, 3.0
    )[0]
    aux = math.exp(gamma_pullback(k, g).log_value(x))
    assert gamma_log_weight(k, g, x) == pytest.approx(math.log(forward / aux), abs=1e-7)


def test_montecarlo_weight_is_unbiased_for_the_quadrature_weight():
    k = GammaKernel(1.5, RATE, rate=sine_rate)
    g = GammaPotential(A=2.0, rate=RATE, anchor=3.0)
    rng = np.random.default_rng(9)
    w = np.exp([gamma_log_weight(k, g, 0.4, rng=rng, method='montecarlo') for _ in range(4000)])
    exact = math.exp(gamma_log_weight(k, g, 0.4))
    assert abs(w.mean() - exact) < 4 * w.std() / math.sqrt(w.size)


@pytest.mark.parametrize('method', ['quadrature', 'montecarlo'])
def test_state_dependent_rate_likelihood_is_unbiased(method):
    exact = integrate.quad(
        lambda y: gamma_dist.pdf(y, 1.5, scale=1 / sine_rate(0.0))
        * gamma_dist.pdf(3.0 - y, 2.0, scale=1 / sine_rate(y)),
        0.0, 3.0,
    )[0]
    estimate = estimate_likelihood(line_model(rate=sine_rate, method=method), n_samples=4000, rng=17)
    assert abs(estimate.mean - exact) < 4 * estimate.se
