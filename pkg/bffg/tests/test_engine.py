# tests/test_engine.py
import math

import numpy as np
import pytest
from scipy.linalg import expm

from bffg.continuous.sde import LinearAuxSpec, SDEKernel, SDESpec
from bffg.engine.dag import JointFiniteKernel
from bffg.engine.likelihood import estimate_likelihood, summarize_log_weights
from bffg.engine.passes import edge_rng, run_backward, run_forward
from bffg.errors import ModelValidationError
from bffg.graph.model import DirectedGraphModel, Edge
from bffg.oracle import enumerate_likelihood, linear_gaussian_marginal, ou_transition
from bffg.potentials.finite import FiniteKernel
from bffg.potentials.gaussian import GaussKernel, GaussPotential

B = np.array([[-0.6, 0.2], [0.1, -0.4]])
BETA = np.array([0.1, 0.0])
SIGMA = np.array([[0.5, 0.0], [0.1, 0.4]])
OBS = {5: np.array([0.3, -0.2]), 6: np.array([0.8, 0.4]), 7: np.array([-0.5, 0.1])}
TAUS = {2: 0.7, 3: 1.1, 4: 0.5}


def mixed_model(sde_edges=True):
    """Gaussian prior edge into 1, inner edges 1 -> {2, 3}, 2 -> 4, noisy leaves 5, 6, 7."""
    def inner(tau):
        if sde_edges:
            return SDEKernel(SDESpec.linear(B, BETA, SIGMA), LinearAuxSpec(B, BETA, SIGMA), tau)
        law = ou_transition(B, BETA, SIGMA, tau, np.zeros(2))
        return GaussKernel(expm(B * tau), law.mean, law.cov)

    emission = lambda: GaussKernel(np.eye(2), np.zeros(2), 0.1 * np.eye(2))
    edges = [
        Edge(0, 1, GaussKernel(np.eye(2), np.zeros(2), 0.5 * np.eye(2))),
        Edge(1, 2, inner(TAUS[2])),
        Edge(1, 3, inner(TAUS[3])),
        Edge(2, 4, inner(TAUS[4])),
        Edge(3, 5, emission()),
        Edge(4, 6, emission()),
        Edge(2, 7, emission()),
    ]
    return DirectedGraphModel(8, 0, np.zeros(2), edges, OBS)


def finite_model(aux=None):
    K = np.array([[0.7, 0.3], [0.2, 0.8]])
    edges = [Edge(0, 1, FiniteKernel(K, aux)), Edge(1, 2, FiniteKernel(K, aux)), Edge(1, 3, FiniteKernel(K, aux))]
    return DirectedGraphModel(4, 0, 0, edges, {2: 1, 3: 0})


def test_mixed_model_root_value_matches_the_gaussian_marginal():
    """Linear SDE edges filter to the same value as their exact Gaussian transitions."""
    bp = run_backward(mixed_model())
    assert isinstance(bp.root_potential, GaussPotential)
    assert bp.log_root_value == pytest.approx(linear_gaussian_marginal(mixed_model(sde_edges=False)), abs=1e-6)


def test_mixed_model_runs_end_to_end_with_zero_weights():
    model = mixed_model()
    bp = run_backward(model)
    trajectory, ledger = run_forward(model, bp, 7)
    assert len(ledger) == 7
    assert set(trajectory.paths) == set(TAUS)
    for v in TAUS:
        assert trajectory.states[v].shape == (2,)
        assert np.allclose(trajectory.paths[v].end, trajectory.states[v])
    assert ledger.total == pytest.approx(bp.log_root_value, abs=1e-8)


def test_forward_pass_is_deterministic_for_a_seed():
    model = mixed_model()
    bp = run_backward(model)
    first, ledger_a = run_forward(model, bp, 123)
    second, ledger_b = run_forward(model, bp, 123)
    for v in TAUS:
        assert np.array_equal(first.states[v], second.states[v])
    assert ledger_a.entries == ledger_b.entries


def test_edge_streams_depend_on_seed_and_vertex_only():
    a = edge_rng(5, 3).standard_normal(4)
    assert np.array_equal(a, edge_rng(5, 3).standard_normal(4))
    assert not np.array_equal(a, edge_rng(5, 4).standard_normal(4))


def test_innovations_replace_the_random_draws():
    model = mixed_model()
    bp = run_backward(model)
    first, _ = run_forward(model, bp, 1)
    again, _ = run_forward(model, bp, 2, innovations=first.innovations)
    for v in TAUS:
        assert np.array_equal(first.states[v], again.states[v])


def test_exact_finite_model_gives_a_zero_variance_estimate():
    model = finite_model()
    estimate = estimate_likelihood(model, n_samples=50, rng=0)
    assert estimate.mean == pytest.approx(enumerate_likelihood(model), rel=1e-12)
    assert estimate.log_se == pytest.approx(0.0, abs=1e-12)
    assert estimate.effective_sample_size == pytest.approx(50.0)


def test_finite_estimate_is_unbiased_with_a_crude_auxiliary():
    model = finite_model(aux=np.full((2, 2), 0.5))
    estimate = estimate_likelihood(model, n_samples=3000, rng=4)
    assert abs(estimate.mean - enumerate_likelihood(model)) < 4 * estimate.se


def test_summary_of_zero_weights_is_degenerate():
    estimate = summarize_log_weights([-math.inf] * 5)
    assert estimate.degenerate
    assert estimate.mean == 0.0
    assert estimate.effective_sample_size == 0.0


def test_summary_averages_in_linear_space():
    log_weights = np.log([0.5, 1.5, 1.0, 3.0])
    estimate = summarize_log_weights(log_weights)
    assert estimate.mean == pytest.approx(1.5)
    assert estimate.se == pytest.approx(np.std([0.5, 1.5, 1.0, 3.0], ddof=1) / 2.0)


def test_summary_of_one_sample_has_unbounded_error():
    estimate = summarize_log_weights([0.3])
    assert estimate.log_mean == pytest.approx(0.3)
    assert estimate.log_se == math.inf


def test_estimate_needs_samples():
    with pytest.raises(ModelValidationError):
        estimate_likelihood(finite_model(), n_samples=0)


def test_collider_messages_are_addressed_by_parent():
    joint = np.random.default_rng(1).dirichlet(np.ones(2), size=(2, 2))
    K = np.array([[0.7, 0.3], [0.2, 0.8]])
    edges = [Edge(0, 1, FiniteKernel(K)), Edge(0, 2, FiniteKernel(K)),
             Edge((1, 2), 3, JointFiniteKernel(joint)), Edge(3, 4, FiniteKernel(K))]
    model = DirectedGraphModel(5, 0, 1, edges, {4: 0})
    bp = run_backward(model)
    first, second = bp.filters[3].message
    assert bp.message(3, 1) is first
    assert bp.message(3, 2) is second
    assert bp.message(3) is first
