# tests/test_finite.py
import math

import numpy as np
import pytest
from scipy import sparse

from bffg.engine.likelihood import estimate_likelihood
from bffg.engine.passes import run_backward, run_forward
from bffg.errors import ModelValidationError, SamplingError
from bffg.graph.model import DirectedGraphModel, Edge
from bffg.oracle import enumerate_conditional, enumerate_likelihood
from bffg.potentials.base import fuse
from bffg.potentials.finite import (
    FiniteKernel, VecPotential, categorical_draw, fs_guided_pmf, fs_init_leaf,
)

K1 = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
K2 = np.array([[0.5, 0.25, 0.25], [0.2, 0.2, 0.6], [0.1, 0.6, 0.3]])
K_AUX = np.full((3, 3), 1.0 / 3.0)


def six_vertex_model(aux=None):
    """0 -> 1 -> {2, 3}, 3 -> {4, 5}; leaves 2, 4, 5."""
    def k(K):
        return FiniteKernel(K, aux)
    edges = [Edge(0, 1, k(K1)), Edge(1, 2, k(K2)), Edge(1, 3, k(K1)), Edge(3, 4, k(K2)), Edge(3, 5, k(K1))]
    return DirectedGraphModel(6, 0, 1, edges, {2: 2, 4: 0, 5: 1})


def test_pullback_is_matrix_vector_product():
    g = VecPotential.from_values([0.2, 0.5, 1.0])
    pulled = FiniteKernel(K1).pullback(g)
    assert np.allclose(pulled.values, K1 @ [0.2, 0.5, 1.0])


def test_fuse_multiplies_pointwise():
    a = VecPotential.from_values([0.5, 1.0, 0.0])
    b = VecPotential.from_values([2.0, 0.5, 1.0])
    assert np.allclose(fuse([a, b]).values, [1.0, 0.5, 0.0])


def test_leaf_potential_is_a_unit_vector():
    g = fs_init_leaf(1, 3)
    assert g.log_value(1) == 0.0
    assert g.log_value(0) == -math.inf


def test_root_value_matches_enumeration_when_auxiliary_is_exact():
    bp = run_backward(six_vertex_model())
    assert bp.log_root_value == pytest.approx(math.log(enumerate_likelihood(six_vertex_model())), abs=1e-12)


def test_exact_auxiliary_gives_zero_variance_weights():
    """Every ledger equals the likelihood when the auxiliary kernels are the true ones."""
    model = six_vertex_model()
    bp = run_backward(model)
    target = math.log(enumerate_likelihood(model))
    for seed in range(20):
        _, ledger = run_forward(model, bp, seed)
        assert ledger.total == pytest.approx(target, abs=1e-10)


def test_guided_draws_follow_the_smoothing_distribution():
    model = six_vertex_model()
    bp = run_backward(model)
    exact = enumerate_conditional(model)
    rng = np.random.default_rng(11)
    n = 4000
    counts = {1: np.zeros(3), 3: np.zeros(3)}
    for _ in range(n):
        trajectory, _ = run_forward(model, bp, rng)
        for v in counts:
            counts[v][trajectory.states[v]] += 1
    for v, c in counts.items():
        se = np.sqrt(exact[v] * (1 - exact[v]) / n)
        assert np.all(np.abs(c / n - exact[v]) < 4 * se + 1e-3)


def test_likelihood_estimate_is_unbiased_with_crude_auxiliary():
    model = six_vertex_model(aux=K_AUX)
    exact = enumerate_likelihood(model)
    estimate = estimate_likelihood(model, n_samples=4000, rng=3)
    assert not estimate.degenerate
    assert abs(estimate.mean - exact) < 4 * estimate.se


def test_noisy_emission_matrix_leaf():
    """A rectangular emission matrix on the leaf edge observes symbols, not states."""
    E = np.array([[0.6, 0.4], [0.1, 0.9], [0.5, 0.5]])
    edges = [Edge(0, 1, FiniteKernel(K1)), Edge(1, 2, FiniteKernel(E)), Edge(1, 3, FiniteKernel(E))]
    model = DirectedGraphModel(4, 0, 0, edges, {2: 1, 3: 0})
    expected = sum(K1[0, s] * E[s, 1] * E[s, 0] for s in range(3))
    assert math.exp(run_backward(model).log_root_value) == pytest.approx(expected, rel=1e-12)
    assert enumerate_likelihood(model) == pytest.approx(expected, rel=1e-12)


def test_sparse_auxiliary_matches_dense():
    g = VecPotential.from_values([0.3, 0.0, 1.0])
    dense = FiniteKernel(K1, K_AUX).pullback(g)
    sparse_aux = FiniteKernel(K1, sparse.csr_matrix(K_AUX)).pullback(g)
    assert np.allclose(dense.values, sparse_aux.values)


def test_guided_pmf_is_kernel_row_times_potential():
    g = VecPotential.from_values([1.0, 2.0, 0.0])
    pmf = fs_guided_pmf(K1, g, 0)
    expected = K1[0] * [1.0, 2.0, 0.0]
    assert np.allclose(pmf, expected / expected.sum())


def test_categorical_draw_skips_zero_weights():
    weights = np.array([0.5, 0.5, 0.0])
    assert categorical_draw(weights, 40.0) == 1
    assert categorical_draw(weights, -40.0) == 0


def test_categorical_draw_rejects_degenerate_weights():
    with pytest.raises(SamplingError):
        categorical_draw(np.zeros(3), 0.0)


def test_non_stochastic_matrix_is_rejected():
    with pytest.raises(ModelValidationError, match='rows must sum'):
        FiniteKernel([[0.5, 0.4], [0.5, 0.5]])
