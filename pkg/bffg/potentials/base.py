"""Contract shared by every potential family.

A :class:`Potential` is a non-negative function ``x -> g(x)`` kept in a closed
parametric form. A :class:`Kernel` knows how to pull a potential back through
its auxiliary kernel, how to sample the guided kernel and how to evaluate the
forward integral needed by the weights. The engine only talks to these two
interfaces.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar, Optional, Sequence, Type

import numpy as np

from bffg.errors import FamilyMismatchError, ModelValidationError
from bffg.graph.model import Observation

logger = logging.getLogger(__name__)


class Potential(ABC):
    family: ClassVar[str] = 'abstract'
    fusable: ClassVar[bool] = True

    @abstractmethod
    def log_value(self, x) -> float:
        """Natural log of g(x); ``-inf`` where g vanishes."""

    def value(self, x) -> float:
        return math.exp(self.log_value(x))

    @classmethod
    def fuse_many(cls, potentials: Sequence['Potential']) -> 'Potential':
        raise FamilyMismatchError(f"{cls.__name__} potentials do not support fusion")

    def describe(self) -> dict:
        return {}


@dataclass
class EdgeFilter:
    """Backward-pass record for one edge.

    ``message`` is g_{pa(s),s} (a tuple with one entry per parent on DAG
    colliders), ``target`` is the fused g_s (``None`` on leaf edges) and
    ``state`` holds the in-edge representation of continuous edges.
    """
    message: Any
    target: Optional[Potential] = None
    state: Any = None


@dataclass
class EdgeDraw:
    state: Any
    log_weight: float
    path: Any = None
    innovation: Any = None


class Kernel(ABC):
    """Forward kernel paired with an auxiliary kernel of a tractable family."""
    family: ClassVar[str] = 'abstract'
    continuous: ClassVar[bool] = False
    # Potential family this kernel sends to its parent and receives from its target.
    message_type: ClassVar[Optional[Type[Potential]]] = None
    target_type: ClassVar[Optional[Type[Potential]]] = None

    @abstractmethod
    def pullback(self, g: Potential) -> Potential:
        """Closed-form ``x -> integral of g(y) under the auxiliary kernel``."""

    def log_integral(self, g: Potential, x) -> float:
        """log of the integral of g against the forward kernel started at x."""
        raise ModelValidationError(f"{type(self).__name__} cannot integrate potentials against the forward kernel")

    def sample(self, g: Potential, x, rng: np.random.Generator, innovation=None):
        """Draw from the guided kernel; returns ``(state, innovation)``."""
        raise ModelValidationError(f"{type(self).__name__} has no guided sampler")

    def init_leaf(self, value) -> Potential:
        raise FamilyMismatchError(f"{type(self).__name__} is not a supported emission")

    def log_density(self, x, value) -> float:
        raise FamilyMismatchError(f"{type(self).__name__} has no emission density")

    def draw_innovation(self, rng: np.random.Generator):
        """Standard driving noise for reparameterised sampling, or ``None``."""
        return None

    @property
    def reparameterised(self) -> bool:
        return False

    @property
    def innovation_scale(self) -> float:
        return 1.0

    def backward(self, g: Potential, edge=None) -> EdgeFilter:
        return EdgeFilter(message=self.pullback(g), target=g)

    def guide(self, filt: EdgeFilter, x, rng: np.random.Generator, innovation=None, edge=None) -> EdgeDraw:
        y, z = self.sample(filt.target, x, rng, innovation)
        return EdgeDraw(state=y, log_weight=edge_log_weight(self, filt.target, filt.message, x), innovation=z)


# ============================================
# FAMILY-AGNOSTIC OPERATIONS
# ============================================

def pullback(kernel: Kernel, g: Potential) -> Potential:
    accepts = kernel.target_type
    if accepts is not None and not isinstance(g, accepts):
        raise FamilyMismatchError(f"{kernel.family} kernel cannot pull back a {type(g).__name__}")
    return kernel.pullback(g)


def fuse(potentials: Sequence[Potential]) -> Potential:
    """Pointwise product of potentials from one family."""
    potentials = list(potentials)
    if not potentials:
        raise ValueError("fuse needs at least one potential")
    kind = type(potentials[0])
    for g in potentials[1:]:
        if type(g) is not kind:
            raise FamilyMismatchError(f"cannot fuse {kind.__name__} with {type(g).__name__}")
    if len(potentials) == 1:
        return potentials[0]
    return kind.fuse_many(potentials)


def init_leaf(obs: Observation) -> Potential:
    return obs.emission.init_leaf(obs.value)


def guided_sample(kernel: Kernel, g: Potential, x, rng: np.random.Generator):
    state, _ = kernel.sample(g, x, rng)
    return state


def edge_log_weight(kernel: Kernel, g, g_edge: Potential, x) -> float:
    """log of (integral of g against kernel at x) / g_edge(x).

    ``g`` may be an :class:`Observation`, in which case the numerator is the
    exact emission density at the observed value (leaf edges).
    """
    denominator = g_edge.log_value(x)
    if denominator == -math.inf:
        logger.warning(f"{kernel.family} edge: message vanishes at the parent state, weight is zero")
        return -math.inf
    if isinstance(g, Observation):
        numerator = kernel.log_density(x, g.value)
    else:
        numerator = kernel.log_integral(g, x)
    return float(numerator - denominator)


def log_matvec(matrix, log_vector: np.ndarray) -> np.ndarray:
    """``log(matrix @ exp(log_vector))`` without underflow; zeros stay ``-inf``."""
    log_vector = np.asarray(log_vector, dtype=float)
    finite = np.isfinite(log_vector)
    if not finite.any():
        return np.full(matrix.shape[0], -np.inf)
    shift = log_vector[finite].max()
    product = matrix @ np.exp(log_vector - shift)
    with np.errstate(divide='ignore'):
        return np.log(np.asarray(product, dtype=float).ravel()) + shift


def log_dot(weights: np.ndarray, log_vector: np.ndarray) -> float:
    return float(log_matvec(np.atleast_2d(weights), log_vector)[0])
