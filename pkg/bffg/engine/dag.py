"""Colliders: edges with several parents.

The child potential pulled back through a joint kernel is a function of all
parent states; it is split into one message per parent by taking conditional
expectations under a parent prior ``pi``. The guided kernel conditions on the
joint parent state, and the edge weight divides by the product of the
per-parent messages.
"""
import logging
import math
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from bffg.continuous.ctmc import CTMCKernel
from bffg.errors import FamilyMismatchError, ModelValidationError, NumericalError
from bffg.potentials.base import EdgeDraw, EdgeFilter, Kernel, Potential, edge_log_weight
from bffg.potentials.finite import FiniteKernel, VecPotential, categorical_draw, check_stochastic
from bffg.potentials.gaussian import LOG_2PI, GaussKernel, GaussPotential, gauss_pullback

logger = logging.getLogger(__name__)


class JointKernel(Kernel):
    """Kernel ``x_pa -> y`` over the joint state of ``len(parent_sizes)`` parents."""
    joint: ClassVar[bool] = True

    def backward(self, g: Potential, edge=None) -> EdgeFilter:
        return EdgeFilter(message=multi_parent_pullback(self, g), target=g)

    def guide(self, filt: EdgeFilter, x, rng, innovation=None, edge=None) -> EdgeDraw:
        y, z = self.sample(filt.target, x, rng, innovation)
        return EdgeDraw(state=y, log_weight=dag_log_weight(self, filt.target, filt.message, x), innovation=z)


# ============================================
# FINITE-STATE COLLIDERS
# ============================================

class JointFiniteKernel(JointKernel):
    """``K[x_1, ..., x_d, y]`` with auxiliary ``K_aux`` of the same shape.

    ``prior`` is the joint pmf of the parents used to split messages; when
    ``None`` the backward pass supplies the joint law of the parents under the
    auxiliary kernels.
    """
    family: ClassVar[str] = 'finite_joint'
    message_type = VecPotential
    target_type = VecPotential

    def __init__(self, K, K_aux=None, prior=None):
        self.K = np.asarray(K, dtype=float)
        self.K_aux = self.K if K_aux is None else np.asarray(K_aux, dtype=float)
        if self.K.ndim < 3:
            raise ModelValidationError(f"a joint kernel needs at least two parent axes, got shape {self.K.shape}")
        if self.K_aux.shape != self.K.shape:
            raise ModelValidationError(f"K {self.K.shape} and K_aux {self.K_aux.shape} differ in shape")
        check_stochastic(self.K, 'K')
        check_stochastic(self.K_aux, 'K_aux')
        self.prior = None
        if prior is not None:
            self.set_prior(prior)

    @property
    def parent_sizes(self) -> Tuple[int, ...]:
        return self.K.shape[:-1]

    @property
    def out_size(self) -> int:
        return self.K.shape[-1]

    def set_prior(self, prior) -> None:
        prior = np.asarray(prior, dtype=float)
        if prior.shape != self.parent_sizes:
            raise ModelValidationError(f"parent prior has shape {prior.shape}, expected {self.parent_sizes}")
        if np.any(prior < 0) or not math.isclose(prior.sum(), 1.0, abs_tol=1e-10):
            raise ModelValidationError("parent prior must be a probability table")
        self.prior = prior

    def joint_pullback(self, g: VecPotential) -> np.ndarray:
        """``log sum_y K_aux[x_pa, y] g(y)`` as an array over the joint parent space."""
        if g.size != self.out_size:
            raise FamilyMismatchError(f"joint kernel with {self.out_size} outcomes cannot pull back length {g.size}")
        finite = np.isfinite(g.logg)
        shift = g.logg[finite].max()
        with np.errstate(divide='ignore'):
            return np.log(self.K_aux @ np.exp(g.logg - shift)) + shift

    def pullback(self, g: VecPotential):
        return multi_parent_pullback(self, g)

    def log_integral(self, g: VecPotential, x) -> float:
        row = self.K[tuple(int(v) for v in x)]
        finite = np.isfinite(g.logg)
        shift = g.logg[finite].max()
        total = float(row @ np.exp(g.logg - shift))
        return math.log(total) + shift if total > 0 else -math.inf

    def sample(self, g: VecPotential, x, rng, innovation=None):
        if innovation is None:
            innovation = self.draw_innovation(rng)
        row = self.K[tuple(int(v) for v in x)]
        weights = row * np.exp(g.logg - g.logg[np.isfinite(g.logg)].max())
        return categorical_draw(weights, innovation, state=tuple(x)), innovation

    def draw_innovation(self, rng):
        return float(rng.standard_normal())

    @property
    def reparameterised(self) -> bool:
        return True


def factorize_finite(log_joint: np.ndarray, prior: np.ndarray) -> List[VecPotential]:
    """``g_u(x_u) = E_pi[g | X_u = x_u]`` for each parent axis ``u``.

    Where ``pi_u(x_u) = 0`` the conditional is replaced by the product of the
    other marginals of ``pi``.
    """
    finite = np.isfinite(log_joint)
    if not finite.any():
        raise NumericalError("joint potential vanishes on every parent configuration")
    shift = log_joint[finite].max()
    g = np.exp(log_joint - shift)
    d = g.ndim
    messages = []
    for u in range(d):
        others = tuple(a for a in range(d) if a != u)
        weighted = (prior * g).sum(axis=others)
        marginal = prior.sum(axis=others)
        values = np.empty_like(marginal)
        positive = marginal > 0
        values[positive] = weighted[positive] / marginal[positive]
        if not positive.all():
            independent = np.ones_like(g)
            for a in others:
                shape = [1] * d
                shape[a] = g.shape[a]
                independent = independent * prior.sum(axis=tuple(b for b in range(d) if b != a)).reshape(shape)
            fallback = (independent * g).sum(axis=others)
            values[~positive] = fallback[~positive]
        with np.errstate(divide='ignore'):
            messages.append(VecPotential(np.log(values) + shift))
    return messages


# ============================================
# GAUSSIAN COLLIDERS
# ============================================

class JointGaussKernel(JointKernel):
    """Gaussian kernel on the concatenated parent states; ``prior = (mean, cov)`` of that vector."""
    family: ClassVar[str] = 'gaussian_joint'
    message_type = GaussPotential
    target_type = GaussPotential

    def __init__(self, parent_dims: Sequence[int], Phi, beta, Q, mean=None, cov=None, prior=None):
        self.parent_dims = tuple(int(d) for d in parent_dims)
        if len(self.parent_dims) < 2:
            raise ModelValidationError("a joint kernel needs at least two parents")
        self.inner = GaussKernel(Phi, beta, Q, mean=mean, cov=cov)
        if self.inner.in_size != sum(self.parent_dims):
            raise ModelValidationError(f"Phi has {self.inner.in_size} columns, parents have {sum(self.parent_dims)}")
        self.prior = None
        if prior is not None:
            self.set_prior(prior)

    @property
    def parent_sizes(self) -> Tuple[int, ...]:
        return self.parent_dims

    def set_prior(self, prior) -> None:
        mean, cov = prior
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        n = sum(self.parent_dims)
        if mean.shape != (n,) or cov.shape != (n, n):
            raise ModelValidationError(f"parent prior must have mean of length {n} and a {n}x{n} covariance")
        self.prior = (mean, cov)

    def concat(self, x) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in x])

    def pullback(self, g: GaussPotential):
        return multi_parent_pullback(self, g)

    def log_integral(self, g: GaussPotential, x) -> float:
        return self.inner.log_integral(g, self.concat(x))

    def sample(self, g: GaussPotential, x, rng, innovation=None):
        return self.inner.sample(g, self.concat(x), rng, innovation)

    def draw_innovation(self, rng):
        return self.inner.draw_innovation(rng)

    @property
    def reparameterised(self) -> bool:
        return True


def _gauss_canonical(mean: np.ndarray, cov: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """``log N(z; mean, cov)`` as ``c + F'z - z'Hz/2``."""
    chol = linalg.cho_factor(cov, lower=True)
    H = linalg.cho_solve(chol, np.eye(cov.shape[0]))
    F = H @ mean
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    c = -0.5 * float(mean @ F) - 0.5 * (mean.size * LOG_2PI + logdet)
    return c, F, H


def factorize_gaussian(g: GaussPotential, mean: np.ndarray, cov: np.ndarray,
                       parent_dims: Sequence[int]) -> List[GaussPotential]:
    """Conditional expectation of ``g`` given each parent block under ``N(mean, cov)``."""
    try:
        c_pi, F_pi, H_pi = _gauss_canonical(mean, cov)
    except linalg.LinAlgError as e:
        raise NumericalError(f"parent prior covariance is not positive definite: {e}")
    c, F, J = g.c + c_pi, g.F + F_pi, g.H + H_pi
    offsets = np.cumsum((0,) + tuple(parent_dims))
    messages = []
    for u in range(len(parent_dims)):
        a = np.arange(offsets[u], offsets[u + 1])
        b = np.setdiff1d(np.arange(offsets[-1]), a)
        try:
            chol = linalg.cho_factor(J[np.ix_(b, b)], lower=True)
        except linalg.LinAlgError as e:
            raise NumericalError(f"co-parent precision is not positive definite: {e}")
        J_ab = J[np.ix_(a, b)]
        H_m = J[np.ix_(a, a)] - J_ab @ linalg.cho_solve(chol, J_ab.T)
        solved = linalg.cho_solve(chol, F[b])
        F_m = F[a] - J_ab @ solved
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
        c_m = c + 0.5 * float(F[b] @ solved) + 0.5 * (b.size * LOG_2PI - logdet)
        c_u, F_u, H_u = _gauss_canonical(mean[a], cov[np.ix_(a, a)])
        H = H_m - H_u
        messages.append(GaussPotential(c_m - c_u, F_m - F_u, 0.5 * (H + H.T)))
    return messages


# ============================================
# FAMILY-AGNOSTIC COLLIDER OPERATIONS
# ============================================

def factorize_potential(kernel: JointKernel, g_joint) -> List[Potential]:
    if kernel.prior is None:
        raise ModelValidationError(f"{kernel.family} collider has no parent prior; supply one in the model")
    if isinstance(kernel, JointFiniteKernel):
        return factorize_finite(g_joint, kernel.prior)
    if isinstance(kernel, JointGaussKernel):
        return factorize_gaussian(g_joint, *kernel.prior, kernel.parent_dims)
    raise FamilyMismatchError(f"no factorisation for {type(kernel).__name__}")


def multi_parent_pullback(kernel, g: Potential) -> Tuple[Potential, ...]:
    """Per-parent messages; a single-parent kernel falls back to its ordinary pullback."""
    if not getattr(kernel, 'joint', False):
        return (kernel.pullback(g),)
    if isinstance(kernel, JointFiniteKernel):
        return tuple(factorize_potential(kernel, kernel.joint_pullback(g)))
    if isinstance(kernel, JointGaussKernel):
        return tuple(factorize_potential(kernel, gauss_pullback(kernel.inner, g)))
    raise FamilyMismatchError(f"no joint pullback for {type(kernel).__name__}")


def dag_log_weight(kernel, g_s: Potential, messages: Sequence[Potential], x_pa) -> float:
    """``log int g_s dK(x_pa) - sum_u log g_u(x_u)``."""
    messages = tuple(messages)
    if len(messages) == 1:
        return edge_log_weight(kernel, g_s, messages[0], x_pa[0] if isinstance(x_pa, tuple) else x_pa)
    denominator = 0.0
    for g_u, x_u in zip(messages, x_pa):
        value = g_u.log_value(x_u)
        if value == -math.inf:
            logger.warning(f"{kernel.family} collider: a parent message vanishes, weight is zero")
            return -math.inf
        denominator += value
    return float(kernel.log_integral(g_s, x_pa) - denominator)


def _aux_matrix(kernel) -> Optional[np.ndarray]:
    """Dense auxiliary transition matrix of a finite-state single-parent edge, if any."""
    if isinstance(kernel, FiniteKernel):
        aux = kernel.K_aux
        return aux.toarray() if hasattr(aux, 'toarray') else np.asarray(aux)
    if isinstance(kernel, CTMCKernel):
        aux = kernel.Q_aux.toarray() if hasattr(kernel.Q_aux, 'toarray') else kernel.Q_aux
        return linalg.expm(aux * kernel.tau)
    return None


def _aux_table(edge) -> np.ndarray:
    """Auxiliary transition table of ``edge``: parent axes first, child axis last."""
    if edge.multi_parent:
        if isinstance(edge.kernel, JointFiniteKernel):
            return edge.kernel.K_aux
    else:
        K = _aux_matrix(edge.kernel)
        if K is not None:
            return K
    raise ModelValidationError(f"edge into {edge.target} is not finite-state; colliders need an explicit parent prior")


def _state_sizes(model) -> Dict[int, int]:
    sizes = {}
    for edge in model.edges:
        if edge.multi_parent:
            if isinstance(edge.kernel, JointFiniteKernel):
                for p, n in zip(edge.parents, edge.kernel.parent_sizes):
                    sizes.setdefault(p, n)
            continue
        K = _aux_matrix(edge.kernel)
        if K is not None:
            sizes.setdefault(edge.parents[0], K.shape[0])
    if model.root not in sizes:
        raise ModelValidationError("cannot infer the state space at the root for the default parent prior")
    return sizes


def auxiliary_joint(model, vertices: Sequence[int]) -> np.ndarray:
    """Joint pmf of ``vertices`` under the auxiliary kernels started at the root value.

    The table is propagated parents-first over the ancestors of ``vertices``;
    an ancestor is summed out once all of its children in that set are in the
    table, so shared ancestors keep the co-parents dependent.
    """
    targets = [int(v) for v in vertices]
    needed = set(targets)
    stack = list(targets)
    while stack:
        v = stack.pop()
        if v == model.root:
            continue
        for p in model.in_edge(v).parents:
            if p not in needed:
                needed.add(p)
                stack.append(p)
    needed.add(model.root)

    sizes = _state_sizes(model)
    pending = {u: sum(1 for c in model.children(u) if c in needed) for u in needed}
    active = [model.root]
    table = np.eye(sizes[model.root])[int(model.root_value)]
    for v in model.forward_order():
        if v not in needed:
            continue
        edge = model.in_edge(v)
        n = len(active)
        table = np.einsum(table, list(range(n)), _aux_table(edge),
                          [active.index(p) for p in edge.parents] + [n], list(range(n + 1)))
        active.append(v)
        for p in edge.parents:
            pending[p] -= 1
        for u in [u for u in active if pending[u] == 0 and u not in targets]:
            table = table.sum(axis=active.index(u))
            active.remove(u)
    return np.transpose(table, [active.index(v) for v in targets])


def auxiliary_marginals(model) -> Dict[int, np.ndarray]:
    """Marginal pmfs of every non-leaf vertex under the auxiliary kernels started at the root."""
    sizes = _state_sizes(model)
    marginals = {model.root: np.eye(sizes[model.root])[int(model.root_value)]}
    for v in model.forward_order():
        if model.is_leaf(v):
            continue
        edge = model.in_edge(v)
        if edge.multi_parent:
            prior = auxiliary_joint(model, edge.parents)
            marginals[v] = np.tensordot(prior, _aux_table(edge), axes=prior.ndim)
        else:
            marginals[v] = marginals[edge.parents[0]] @ _aux_table(edge)
    return marginals


def default_parent_priors(model) -> Dict[int, np.ndarray]:
    """Parent priors for the prior-less finite colliders, keyed by the collider's target.

    Each is the joint law of the co-parents under the auxiliary kernels; the
    model's kernels are left untouched.
    """
    priors = {}
    for edge in model.edges:
        if not edge.multi_parent or getattr(edge.kernel, 'prior', None) is not None:
            continue
        if not isinstance(edge.kernel, JointFiniteKernel):
            raise ModelValidationError(f"collider into {edge.target} needs an explicit parent prior")
        priors[edge.target] = auxiliary_joint(model, edge.parents)
        logger.debug(f"collider into {edge.target}: default parent prior from the auxiliary joint law")
    return priors
