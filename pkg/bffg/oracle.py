"""Brute-force and closed-form reference values for small models.

Nothing here goes through potentials or pullbacks: finite-state models are
summed over every hidden configuration, linear-Gaussian models are handled by
propagating the joint moments of all vertices, and linear SDEs by matrix
exponentials of block matrices.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import multivariate_normal

from bffg import config
from bffg.errors import ModelValidationError

logger = logging.getLogger(__name__)


# ============================================
# FINITE-STATE ENUMERATION
# ============================================

def _transition_array(kernel) -> np.ndarray:
    family = getattr(kernel, 'family', None)
    if family in ('finite', 'finite_joint'):
        return np.asarray(kernel.K, dtype=float)
    if family == 'ctmc':
        Q = kernel.Q.toarray() if hasattr(kernel.Q, 'toarray') else np.asarray(kernel.Q, dtype=float)
        return linalg.expm(Q * kernel.tau)
    raise ModelValidationError(f"cannot enumerate a model with {family} kernels")


def _broadcast(factor: np.ndarray, axes: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    order = np.argsort(axes)
    factor = np.transpose(factor, order)
    target = [1] * len(shape)
    for a in sorted(axes):
        target[a] = shape[a]
    return factor.reshape(target)


@dataclass
class Enumeration:
    """Unnormalised joint pmf of the hidden vertices and the observations."""
    hidden: Tuple[int, ...]
    joint: np.ndarray

    @property
    def likelihood(self) -> float:
        return float(self.joint.sum())

    @property
    def conditional(self) -> np.ndarray:
        total = self.joint.sum()
        if total <= 0:
            raise ModelValidationError("observations have zero probability")
        return self.joint / total

    def marginal(self, v: int) -> np.ndarray:
        axis = self.hidden.index(v)
        others = tuple(a for a in range(len(self.hidden)) if a != axis)
        return self.conditional.sum(axis=others)


def enumerate_model(model) -> Enumeration:
    hidden = tuple(v for v in model.forward_order() if not model.is_leaf(v))
    arrays = {v: _transition_array(model.in_edge(v).kernel) for v in model.vertices if v != model.root}
    shape = [arrays[v].shape[-1] for v in hidden]
    size = int(np.prod(shape)) if shape else 1
    if size > config.ENUM_LIMIT:
        raise ModelValidationError(f"{size} hidden configurations exceed the enumeration limit {config.ENUM_LIMIT}")
    axis = {v: i for i, v in enumerate(hidden)}
    joint = np.ones(shape)

    for v in model.vertices:
        if v == model.root:
            continue
        edge = model.in_edge(v)
        K = arrays[v]
        # fix the root and observed coordinates, keep the others as axes
        index: List = []
        axes: List[int] = []
        for p in edge.parents:
            if p == model.root:
                index.append(int(model.root_value))
            else:
                index.append(slice(None))
                axes.append(axis[p])
        if model.is_leaf(v):
            index.append(int(model.observation(v).value))
        else:
            index.append(slice(None))
            axes.append(axis[v])
        factor = K[tuple(index)]
        joint = joint * (_broadcast(factor, axes, shape) if axes else factor)
    return Enumeration(hidden=hidden, joint=np.asarray(joint))


def enumerate_likelihood(model) -> float:
    return enumerate_model(model).likelihood


def enumerate_conditional(model) -> Dict[int, np.ndarray]:
    """Smoothing marginals of every hidden vertex."""
    result = enumerate_model(model)
    return {v: result.marginal(v) for v in result.hidden}


# ============================================
# LINEAR-GAUSSIAN MOMENTS
# ============================================

def _linear_kernel(edge):
    # colliders wrap a GaussKernel over the concatenated parent states
    return getattr(edge.kernel, 'inner', edge.kernel)


def linear_gaussian_marginal(model) -> float:
    """Exact log density of all leaf observations of a linear-Gaussian model (colliders included)."""
    mean: Dict[int, np.ndarray] = {model.root: np.atleast_1d(np.asarray(model.root_value, dtype=float))}
    order = [model.root] + model.forward_order()
    dims = {model.root: mean[model.root].size}
    for v in order[1:]:
        dims[v] = _linear_kernel(model.in_edge(v)).Phi.shape[0]
    offsets = np.cumsum([0] + [dims[v] for v in order])
    pos = {v: slice(offsets[i], offsets[i + 1]) for i, v in enumerate(order)}
    n = offsets[-1]
    cov = np.zeros((n, n))
    for v in order[1:]:
        edge = model.in_edge(v)
        kernel = _linear_kernel(edge)
        if getattr(kernel, 'mean', None) is not None or getattr(kernel, 'cov', None) is not None:
            raise ModelValidationError(f"edge into {v} is not linear-Gaussian")
        parents = [pos[p] for p in edge.parents]
        rows = np.concatenate([np.arange(n)[s] for s in parents])
        x_mean = np.concatenate([mean[p] for p in edge.parents])
        mean[v] = kernel.Phi @ x_mean + kernel.beta
        cross = kernel.Phi @ cov[rows, :]
        cov[pos[v], :] = cross
        cov[:, pos[v]] = cross.T
        cov[pos[v], pos[v]] = kernel.Phi @ cov[np.ix_(rows, rows)] @ kernel.Phi.T + kernel.Q
    leaves = list(model.leaves)
    idx = np.concatenate([np.arange(n)[pos[v]] for v in leaves])
    values = np.concatenate([np.atleast_1d(np.asarray(model.observation(v).value, dtype=float)) for v in leaves])
    means = np.concatenate([mean[v] for v in leaves])
    return float(multivariate_normal.logpdf(values, means, cov[np.ix_(idx, idx)]))


# ============================================
# LINEAR SDES
# ============================================

@dataclass
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray

    def logpdf(self, x) -> float:
        return float(multivariate_normal.logpdf(np.atleast_1d(x), self.mean, self.cov))


def ou_transition(B, beta, sigma, tau: float, x0) -> GaussianLaw:
    """Law of ``X_tau`` for ``dX = (B X + beta) du + sigma dW`` started at ``x0``, via block exponentials."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = B.shape[0]
    drift = np.zeros((d + 1, d + 1))
    drift[:d, :d] = B
    drift[:d, d] = beta
    E = linalg.expm(drift * tau)
    mean = E[:d, :d] @ x0 + E[:d, d]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -B
    block[:d, d:] = sigma @ sigma.T
    block[d:, d:] = B.T
    V = linalg.expm(block * tau)
    cov = V[d:, d:].T @ V[:d, d:]
    return GaussianLaw(mean=mean, cov=0.5 * (cov + cov.T))


def ou_bridge_oracle(B, beta, sigma, tau: float, x0, v, obs_cov=None) -> Tuple[GaussianLaw, GaussianLaw, float]:
    """Transition law, law of ``X_tau`` given ``v = X_tau + N(0, obs_cov)`` and ``log p(v)``.

    ``obs_cov=None`` conditions on ``X_tau = v`` exactly; the returned
    endpoint law is then a point mass with zero covariance.
    """
    prior = ou_transition(B, beta, sigma, tau, x0)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if obs_cov is None:
        return prior, GaussianLaw(v, np.zeros_like(prior.cov)), prior.logpdf(v)
    obs_cov = np.atleast_2d(np.asarray(obs_cov, dtype=float))
    S = prior.cov + obs_cov
    gain = linalg.solve(S, prior.cov, assume_a='pos').T
    post = GaussianLaw(prior.mean + gain @ (v - prior.mean), prior.cov - gain @ prior.cov)
    return prior, post, float(multivariate_normal.logpdf(v, prior.mean, S))


def riccati_closed_form(H_tau: np.ndarray, tau: float, u: float) -> np.ndarray:
    """``H(u)`` for ``B = 0``, unit auxiliary diffusion: ``(H(tau)^-1 + (tau - u) I)^-1``."""
    H_tau = np.atleast_2d(np.asarray(H_tau, dtype=float))
    return linalg.inv(linalg.inv(H_tau) + (tau - u) * np.eye(H_tau.shape[0]))


def brute_force_counts(lam, gam, neighbors, x) -> np.ndarray:
    """Law of the next infection count from configuration ``x`` by summing over all ``2^N`` successors."""
    lam, gam, x = (np.asarray(a, dtype=float) for a in (lam, gam, x))
    N = x.size
    if 2 ** N > config.ENUM_LIMIT:
        raise ModelValidationError(f"2^{N} configurations exceed the enumeration limit")
    pressure = np.array([x[np.asarray(nb, dtype=int)].mean() if len(nb) else 0.0 for nb in neighbors])
    p_one = np.where(x == 1, 1.0 - gam, lam * pressure)
    grid = np.array(np.meshgrid(*[[0, 1]] * N, indexing='ij')).reshape(N, -1).T
    probs = np.prod(np.where(grid == 1, p_one, 1.0 - p_one), axis=1)
    counts = np.zeros(N + 1)
    np.add.at(counts, grid.sum(axis=1), probs)
    return counts
