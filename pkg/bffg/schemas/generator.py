# bffg/schemas/generator.py
"""Synthetic model files with data simulated from the forward model."""
import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np

from bffg import config
from bffg.errors import ModelValidationError
from bffg.schemas.model_file import (
    FiniteEdge, GaussianEdge, ModelFile, ParameterSpec, PriorSpec, SDEEdge,
)

logger = logging.getLogger(__name__)

TANH_PARAMETERS = ('theta0', 'theta1', 'sigma0', 'sigma1')
TANH_TRUTH = (0.0, 0.65, 0.1, 0.4)


def tree_shape(levels: int, branching: int) -> List[Tuple[int, int]]:
    """``(parent, child)`` pairs of a complete tree, breadth first, root 0."""
    if levels < 2 or branching < 1:
        raise ModelValidationError(f"need at least two levels and one branch, got ({levels}, {branching})")
    pairs, frontier, next_id = [], [0], 1
    for _ in range(levels - 1):
        new_frontier = []
        for parent in frontier:
            for _ in range(branching):
                pairs.append((parent, next_id))
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    return pairs


def _tanh_step(x, B, sigma, dt, z):
    return x + np.tanh(B @ x) * dt + sigma * math.sqrt(dt) * z


def tanh_tree_model(
    levels: int = 3,
    branching: int = 3,
    theta: Sequence[float] = TANH_TRUTH,
    seed: int = 0,
    leaf_variance: float = 1e-3,
    tau_range: Tuple[float, float] = (1.2, 2.2),
) -> ModelFile:
    """Two-dimensional tanh-drift SDE on a complete tree, noisy observations at the tree's leaves.

    Every tree vertex gets an SDE in-edge; each tree leaf additionally emits
    an observed vertex through ``N(x, leaf_variance I)``.
    """
    theta0, theta1, sigma0, sigma1 = (float(t) for t in theta)
    rng = np.random.default_rng(seed)
    pairs = tree_shape(levels, branching)
    n_nodes = len(pairs) + 1
    B = np.array([[-theta0, theta0], [theta1, -theta1]])
    sigma = np.array([sigma0, sigma1])

    states: Dict[int, np.ndarray] = {0: np.zeros(2)}
    edges = []
    children = {p for p, _ in pairs}
    for parent, child in pairs:
        tau = round(float(rng.uniform(*tau_range)), 6)
        M = config.default_sde_steps(tau)
        x = states[parent].copy()
        for _ in range(M):
            x = _tanh_step(x, B, sigma, tau / M, rng.standard_normal(2))
        states[child] = x
        edges.append(SDEEdge(
            family='sde', parents=parent, target=child, tau=tau, drift='tanh_coupled',
            B=[['-theta0', 'theta0'], ['theta1', '-theta1']], beta=[0.0, 0.0],
            sigma=[['sigma0', 0.0], [0.0, 'sigma1']],
        ))

    observations = {}
    next_id = n_nodes
    for node in range(1, n_nodes):
        if node in children:
            continue
        noisy = states[node] + math.sqrt(leaf_variance) * rng.standard_normal(2)
        edges.append(GaussianEdge(
            family='gaussian', parents=node, target=next_id,
            Phi=[[1.0, 0.0], [0.0, 1.0]], beta=[0.0, 0.0], Q=[['eps', 0.0], [0.0, 'eps']],
        ))
        observations[next_id] = [float(v) for v in noisy]
        next_id += 1

    sigma_prior = PriorSpec(kind='uniform', params=[0.0, 10.0])
    parameters = {
        'theta0': ParameterSpec(value=theta0, step=0.1),
        'theta1': ParameterSpec(value=theta1, step=0.1),
        'sigma0': ParameterSpec(value=sigma0, prior=sigma_prior, step=0.05),
        'sigma1': ParameterSpec(value=sigma1, prior=sigma_prior, step=0.05),
        'eps': ParameterSpec(value=leaf_variance, free=False),
    }
    logger.info(f"tanh tree: {n_nodes} tree vertices, {len(observations)} observed leaves, seed {seed}")
    return ModelFile(
        name=f'tanh-tree-{levels}x{branching}',
        vertices=next_id,
        root=0,
        root_value=[0.0, 0.0],
        parameters=parameters,
        edges=edges,
        observations=observations,
    )


def _random_stochastic(rng, rows: int, cols: int) -> np.ndarray:
    return rng.dirichlet(np.ones(cols), size=rows)


def finite_tree_model(n_vertices: int = 6, n_states: int = 3, seed: int = 0, perturb: float = 0.0) -> ModelFile:
    """Random recursive tree with random row-stochastic kernels.

    Vertex ``v`` hangs off a uniformly chosen earlier vertex; leaf states are
    simulated forward from root state 0. With ``perturb > 0`` each auxiliary
    kernel mixes a fresh random kernel into the true one.
    """
    if n_vertices < 2 or n_states < 1:
        raise ModelValidationError(f"need two vertices and one state, got ({n_vertices}, {n_states})")
    if not 0.0 <= perturb <= 1.0:
        raise ModelValidationError(f"perturb must lie in [0, 1], got {perturb}")
    rng = np.random.default_rng(seed)
    parent_of = {v: int(rng.integers(0, v)) for v in range(1, n_vertices)}
    has_child = set(parent_of.values())

    states = {0: 0}
    edges = []
    observations = {}
    for v in range(1, n_vertices):
        K = _random_stochastic(rng, n_states, n_states)
        K_aux = None
        if perturb > 0:
            K_aux = ((1.0 - perturb) * K + perturb * _random_stochastic(rng, n_states, n_states)).tolist()
        states[v] = int(rng.choice(n_states, p=K[states[parent_of[v]]]))
        edges.append(FiniteEdge(family='finite', parents=parent_of[v], target=v, K=K.tolist(), K_aux=K_aux))
        if v not in has_child:
            observations[v] = states[v]
    return ModelFile(
        name=f'finite-tree-{n_vertices}x{n_states}',
        vertices=n_vertices,
        root=0,
        root_value=0,
        edges=edges,
        observations=observations,
    )
