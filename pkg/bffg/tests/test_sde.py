# tests/test_sde.py
import math

import numpy as np
import pytest

import bffg.config as config
from bffg.continuous.sde import (
    LinearAuxSpec, SDEKernel, SDESpec, sde_guided_simulate, solve_backward_odes,
)
from bffg.engine.likelihood import estimate_likelihood
from bffg.engine.passes import run_backward, run_forward
from bffg.errors import NumericalError
from bffg.graph.model import DirectedGraphModel, Edge
from bffg.oracle import ou_bridge_oracle, ou_transition, riccati_closed_form
from bffg.potentials.gaussian import GaussKernel, GaussPotential, gauss_init_leaf

B = np.array([[-0.8, 0.3], [0.0, -0.5]])
BETA = np.array([0.2, -0.1])
SIGMA = np.array([[0.6, 0.0], [0.2, 0.5]])
OBS_COV = 0.05 * np.eye(2)


def ou_model(tau=1.3, x0=(0.4, -0.2), v=(0.9, 0.1), aux=None):
    aux = aux or LinearAuxSpec(B, BETA, SIGMA)
    edges = [
        Edge(0, 1, SDEKernel(SDESpec.linear(B, BETA, SIGMA), aux, tau)),
        Edge(1, 2, GaussKernel(np.eye(2), np.zeros(2), OBS_COV)),
    ]
    return DirectedGraphModel(3, 0, np.array(x0), edges, {2: np.array(v)})


def test_riccati_matches_closed_form():
    """B = 0, unit diffusion: H(u) = (H(tau)^-1 + (tau - u) I)^-1."""
    H_tau = np.array([[2.0, 0.5], [0.5, 1.0]])
    aux = LinearAuxSpec(np.zeros((2, 2)), np.zeros(2), np.eye(2))
    bode = solve_backward_odes(aux, GaussPotential(0.0, np.zeros(2), H_tau), 1.5, 1000)
    for k in (0, 250, 700):
        assert np.allclose(bode.H[k], riccati_closed_form(H_tau, 1.5, bode.grid[k]), atol=1e-6)


def test_backward_solution_solves_the_kolmogorov_equation():
    """d/du log g + L_aux log g terms vanish along the RK4 solution (checks the sign of dc)."""
    aux = LinearAuxSpec(B, BETA, SIGMA)
    terminal = gauss_init_leaf([0.9, 0.1], np.eye(2), np.zeros(2), OBS_COV)
    bode = solve_backward_odes(aux, terminal, 1.0, 1000)
    a = aux.a(0.0)
    x = np.array([0.3, -0.7])
    for k in (100, 500, 900):
        h = bode.grid[k + 1] - bode.grid[k]
        d_log_g = (bode.log_g(k + 1, x) - bode.log_g(k - 1, x)) / (2 * h)
        grad = bode.F[k] - bode.H[k] @ x
        generator = aux.drift(0.0, x) @ grad + 0.5 * np.trace(a @ (np.outer(grad, grad) - bode.H[k]))
        assert abs(d_log_g + generator) < 1e-3


def test_linear_sde_root_value_matches_transition_density():
    _, _, logp = ou_bridge_oracle(B, BETA, SIGMA, 1.3, [0.4, -0.2], [0.9, 0.1], obs_cov=OBS_COV)
    assert run_backward(ou_model()).log_root_value == pytest.approx(logp, abs=1e-6)


def test_exact_auxiliary_gives_zero_weights():
    model = ou_model()
    bp = run_backward(model)
    _, ledger = run_forward(model, bp, 0)
    assert ledger.entries[1] == pytest.approx(0.0, abs=1e-10)


def test_guided_endpoint_has_the_conditioned_law():
    _, posterior, _ = ou_bridge_oracle(B, BETA, SIGMA, 1.3, [0.4, -0.2], [0.9, 0.1], obs_cov=OBS_COV)
    model = ou_model()
    bp = run_backward(model)
    rng = np.random.default_rng(2)
    ends = np.array([run_forward(model, bp, rng)[0].states[1] for _ in range(1500)])
    se = np.sqrt(np.diag(posterior.cov) / len(ends))
    assert np.all(np.abs(ends.mean(axis=0) - posterior.mean) < 4 * se + 1e-2)


def test_uninformative_potential_leaves_the_process_unguided():
    aux = LinearAuxSpec(B, BETA, SIGMA)
    bode = solve_backward_odes(aux, GaussPotential.uninformative(2), 1.0, 100)
    assert np.allclose(bode.H, 0.0) and np.allclose(bode.F, 0.0)
    rng = np.random.default_rng(6)
    sde = SDESpec.linear(B, BETA, SIGMA)
    ends = np.array([sde_guided_simulate(sde, bode, [0.4, -0.2], rng).end for _ in range(2000)])
    law = ou_transition(B, BETA, SIGMA, 1.0, [0.4, -0.2])
    se = np.sqrt(np.diag(law.cov) / len(ends))
    assert np.all(np.abs(ends.mean(axis=0) - law.mean) < 4 * se + 5e-3)


def test_nonlinear_drift_likelihood_agrees_with_forward_simulation():
    """Guided estimate against plain Monte Carlo of the observation density, same Euler grid."""
    drift = lambda u, x: -0.5 * x + 0.3 * np.sin(x)
    sde = SDESpec(drift=drift, dispersion=lambda u, x: np.array([[0.7]]))
    aux = LinearAuxSpec([[-0.5]], [0.0], [[0.7]])
    obs_var, v, tau = 0.1, 0.8, 1.0
    edges = [
        Edge(0, 1, SDEKernel(sde, aux, tau, n_steps=100)),
        Edge(1, 2, GaussKernel([[1.0]], [0.0], [[obs_var]])),
    ]
    model = DirectedGraphModel(3, 0, np.array([0.3]), edges, {2: np.array([v])})
    guided = estimate_likelihood(model, n_samples=2000, rng=12)

    rng = np.random.default_rng(13)
    n, dt = 40000, tau / 100
    x = np.full(n, 0.3)
    for _ in range(100):
        x = x + (-0.5 * x + 0.3 * np.sin(x)) * dt + 0.7 * math.sqrt(dt) * rng.standard_normal(n)
    dens = np.exp(-0.5 * (v - x) ** 2 / obs_var) / math.sqrt(2 * math.pi * obs_var)
    plain, plain_se = dens.mean(), dens.std() / math.sqrt(n)
    # both estimates carry their own O(dt) Euler error
    assert abs(guided.mean - plain) < 4 * math.hypot(guided.se, plain_se) + 0.02 * plain


def test_default_grid_follows_configuration(monkeypatch):
    monkeypatch.setattr(config, 'SDE_MAX_STEP', 0.05)
    kernel = SDEKernel(SDESpec.linear(B, BETA, SIGMA), LinearAuxSpec(B, BETA, SIGMA), 1.0)
    assert kernel.n_steps == 20
    assert kernel.innovation_scale == pytest.approx(math.sqrt(0.05))


def test_backward_blow_up_raises_numerical_error(monkeypatch):
    monkeypatch.setattr(config, 'H_BLOWUP', 1e3)
    aux = LinearAuxSpec([[5.0]], [0.0], [[0.0]])
    with pytest.raises(NumericalError, match='blew up'):
        solve_backward_odes(aux, GaussPotential(0.0, np.zeros(1), np.eye(1)), 2.0, 200)
