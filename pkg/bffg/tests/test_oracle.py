# tests/test_oracle.py
import math

import numpy as np
import pytest
from scipy.stats import norm

from bffg import config
from bffg.errors import ModelValidationError
from bffg.graph.model import DirectedGraphModel, Edge
from bffg.oracle import (
    brute_force_counts, enumerate_conditional, enumerate_likelihood, linear_gaussian_marginal, ou_bridge_oracle,
    ou_transition, riccati_closed_form,
)
from bffg.potentials.finite import FiniteKernel
from bffg.potentials.gaussian import GaussKernel

K = np.array([[0.6, 0.4], [0.1, 0.9]])


def test_single_edge_sums_over_the_hidden_states():
    edges = [Edge(0, 1, FiniteKernel(K)), Edge(1, 2, FiniteKernel(K))]
    model = DirectedGraphModel(3, 0, 0, edges, {2: 1})
    assert enumerate_likelihood(model) == pytest.approx(K[0] @ K[:, 1])
    posterior = enumerate_conditional(model)[1]
    assert np.allclose(posterior, K[0] * K[:, 1] / (K[0] @ K[:, 1]))


def test_one_state_chain_is_the_product_of_emissions():
    E = np.array([[0.3, 0.7]])
    edges = [Edge(0, 1, FiniteKernel([[1.0]])), Edge(1, 2, FiniteKernel(E)), Edge(1, 3, FiniteKernel(E))]
    model = DirectedGraphModel(4, 0, 0, edges, {2: 1, 3: 0})
    assert enumerate_likelihood(model) == pytest.approx(0.7 * 0.3)


def test_enumeration_limit_is_enforced(monkeypatch):
    monkeypatch.setattr(config, 'ENUM_LIMIT', 1)
    edges = [Edge(0, 1, FiniteKernel(K)), Edge(1, 2, FiniteKernel(K))]
    with pytest.raises(ModelValidationError, match='enumeration limit'):
        enumerate_likelihood(DirectedGraphModel(3, 0, 0, edges, {2: 0}))


def test_gaussian_marginal_of_one_edge():
    edges = [Edge(0, 1, GaussKernel([[2.0]], [0.5], [[0.3]]))]
    model = DirectedGraphModel(2, 0, np.array([1.0]), edges, {1: np.array([2.2])})
    assert linear_gaussian_marginal(model) == pytest.approx(norm.logpdf(2.2, 2.5, math.sqrt(0.3)))


def test_gaussian_marginal_refuses_nonlinear_means():
    edges = [Edge(0, 1, GaussKernel([[1.0]], [0.0], [[0.3]], mean=np.tanh))]
    model = DirectedGraphModel(2, 0, np.array([1.0]), edges, {1: np.array([0.2])})
    with pytest.raises(ModelValidationError, match='not linear-Gaussian'):
        linear_gaussian_marginal(model)


def test_scalar_ou_transition():
    b, beta, s, tau, x0 = -0.7, 0.2, 0.5, 1.3, 0.4
    law = ou_transition([[b]], [beta], [[s]], tau, [x0])
    mean = x0 * math.exp(b * tau) + beta / b * (math.exp(b * tau) - 1.0)
    var = s * s / (2 * -b) * (1.0 - math.exp(2 * b * tau))
    assert law.mean[0] == pytest.approx(mean, rel=1e-10)
    assert law.cov[0, 0] == pytest.approx(var, rel=1e-10)


def test_brownian_transition_has_linear_variance():
    law = ou_transition(np.zeros((2, 2)), np.zeros(2), np.eye(2), 2.0, [0.0, 1.0])
    assert np.allclose(law.mean, [0.0, 1.0])
    assert np.allclose(law.cov, 2.0 * np.eye(2))


def test_bridge_oracle_conditions_on_the_observation():
    prior, post, logp = ou_bridge_oracle([[-0.5]], [0.0], [[1.0]], 1.0, [0.0], [1.0], obs_cov=[[0.1]])
    gain = prior.cov[0, 0] / (prior.cov[0, 0] + 0.1)
    assert post.mean[0] == pytest.approx(prior.mean[0] + gain * (1.0 - prior.mean[0]))
    assert post.cov[0, 0] == pytest.approx((1 - gain) * prior.cov[0, 0])
    assert logp == pytest.approx(norm.logpdf(1.0, prior.mean[0], math.sqrt(prior.cov[0, 0] + 0.1)))


def test_exact_bridge_endpoint_is_a_point_mass():
    prior, post, logp = ou_bridge_oracle([[-0.5]], [0.0], [[1.0]], 1.0, [0.0], [0.3])
    assert post.mean[0] == 0.3
    assert post.cov[0, 0] == 0.0
    assert logp == pytest.approx(prior.logpdf([0.3]))


def test_riccati_closed_form_at_the_endpoint():
    H = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.allclose(riccati_closed_form(H, 1.0, 1.0), H)


def test_count_law_sums_to_one():
    neighbors = [[1, 2], [0], [0, 1]]
    counts = brute_force_counts([0.5, 0.3, 0.8], [0.2, 0.4, 0.1], neighbors, [1, 0, 1])
    assert counts.sum() == pytest.approx(1.0)
    # vertex 1 is susceptible and its only neighbour is infected
    p = np.array([0.8, 0.3 * 1.0, 0.9])
    exact = np.zeros(4)
    for bits in np.ndindex(2, 2, 2):
        exact[sum(bits)] += np.prod(np.where(np.array(bits) == 1, p, 1 - p))
    assert np.allclose(counts, exact)
