"""Finite-state Markov chains on trees.

States are ``0..R-1``. Potentials are stored as log-vectors with ``-inf`` for
hard zeros, so unit-vector leaf potentials propagate exactly. Guided draws go
through the inverse CDF of a uniform obtained from a standard normal
innovation; that keeps them reparameterisable for the MCMC sampler.
"""
import logging
from dataclasses import dataclass
from typing import ClassVar, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.special import ndtr

from bffg.errors import FamilyMismatchError, ModelValidationError, NumericalError, SamplingError
from bffg.potentials.base import Kernel, Potential, log_matvec

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12


def check_stochastic(K, name: str = 'K') -> None:
    dense = K.toarray() if sparse.issparse(K) else np.asarray(K)
    if dense.ndim < 2 or dense.shape[-1] < 1:
        raise ModelValidationError(f"{name} must be a matrix, got shape {dense.shape}")
    if np.any(dense < 0):
        raise ModelValidationError(f"{name} has negative entries")
    worst = float(np.max(np.abs(dense.sum(axis=-1) - 1.0)))
    if worst > STOCHASTIC_TOL:
        raise ModelValidationError(f"{name} rows must sum to 1 (worst deviation {worst:.3g})")


def categorical_draw(weights: np.ndarray, z: float, state=None) -> int:
    """Inverse-CDF draw from unnormalised ``weights`` driven by ``z ~ N(0,1)``."""
    total = float(weights.sum())
    if not np.isfinite(total) or total <= 0:
        raise SamplingError("guided pmf has a degenerate normaliser", state=state)
    cdf = np.cumsum(weights) / total
    idx = int(np.searchsorted(cdf, ndtr(z), side='right'))
    idx = min(idx, weights.size - 1)
    # never land on a zero-probability state through rounding at the top of the cdf
    while weights[idx] <= 0:
        idx -= 1
    return idx


@dataclass(frozen=True, eq=False)
class VecPotential(Potential):
    logg: np.ndarray

    family: ClassVar[str] = 'finite'

    def __post_init__(self):
        logg = np.atleast_1d(np.asarray(self.logg, dtype=float))
        if logg.ndim != 1:
            raise ModelValidationError(f"vector potential must be one-dimensional, got shape {logg.shape}")
        if not np.any(np.isfinite(logg)):
            raise NumericalError("vector potential vanishes identically")
        object.__setattr__(self, 'logg', logg)

    @classmethod
    def from_values(cls, g) -> 'VecPotential':
        with np.errstate(divide='ignore'):
            return cls(np.log(np.asarray(g, dtype=float)))

    @property
    def size(self) -> int:
        return self.logg.size

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.logg)

    def log_value(self, x) -> float:
        return float(self.logg[int(x)])

    @classmethod
    def fuse_many(cls, potentials: Sequence['VecPotential']) -> 'VecPotential':
        return fs_fuse(potentials)

    def describe(self) -> dict:
        return {'log_g': self.logg.tolist()}


class FiniteKernel(Kernel):
    """Transition matrix ``K`` with auxiliary ``K_aux`` (dense or scipy.sparse).

    Used as a leaf emission the columns index observed symbols, and ``K`` may
    then be rectangular.
    """
    family: ClassVar[str] = 'finite'
    message_type = VecPotential
    target_type = VecPotential

    def __init__(self, K, K_aux=None):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        if K_aux is None:
            K_aux = self.K
        self.K_aux = K_aux if sparse.issparse(K_aux) else np.atleast_2d(np.asarray(K_aux, dtype=float))
        check_stochastic(self.K, 'K')
        check_stochastic(self.K_aux, 'K_aux')
        if self.K_aux.shape != self.K.shape:
            raise ModelValidationError(f"K {self.K.shape} and K_aux {self.K_aux.shape} differ in shape")

    @property
    def in_size(self) -> int:
        return self.K.shape[0]

    @property
    def out_size(self) -> int:
        return self.K.shape[1]

    def pullback(self, g: VecPotential) -> VecPotential:
        return fs_pullback(self.K_aux, g)

    def log_integral(self, g: VecPotential, x) -> float:
        return float(log_matvec(self.K[int(x)][None, :], g.logg)[0])

    def sample(self, g: VecPotential, x, rng, innovation=None):
        if innovation is None:
            innovation = self.draw_innovation(rng)
        return fs_guided_sample(self.K, g, int(x), rng, z=innovation), innovation

    def init_leaf(self, value) -> VecPotential:
        aux = self.K_aux.toarray() if sparse.issparse(self.K_aux) else self.K_aux
        return fs_init_leaf(int(value), aux.shape[1], emission=aux)

    def log_density(self, x, value) -> float:
        with np.errstate(divide='ignore'):
            return float(np.log(self.K[int(x), int(value)]))

    def draw_innovation(self, rng):
        return float(rng.standard_normal())

    @property
    def reparameterised(self) -> bool:
        return True


# ============================================
# FAMILY OPERATIONS
# ============================================

def fs_pullback(K_aux, g: VecPotential) -> VecPotential:
    if K_aux.shape[1] != g.size:
        raise FamilyMismatchError(f"matrix with {K_aux.shape[1]} columns cannot pull back a potential of length {g.size}")
    return VecPotential(log_matvec(K_aux, g.logg))


def fs_fuse(potentials: Sequence[VecPotential]) -> VecPotential:
    potentials = list(potentials)
    sizes = {g.size for g in potentials}
    if len(sizes) != 1:
        raise FamilyMismatchError(f"cannot fuse vector potentials of lengths {sorted(sizes)}")
    return VecPotential(np.sum([g.logg for g in potentials], axis=0))


def fs_init_leaf(k: int, R: int, emission: Optional[np.ndarray] = None) -> VecPotential:
    """Unit vector ``e_k``, or column ``k`` of an emission matrix for noisy observations."""
    if emission is None:
        if not 0 <= k < R:
            raise ModelValidationError(f"observed state {k} outside 0..{R - 1}")
        logg = np.full(R, -np.inf)
        logg[k] = 0.0
        return VecPotential(logg)
    emission = np.atleast_2d(np.asarray(emission, dtype=float))
    if not 0 <= k < emission.shape[1]:
        raise ModelValidationError(f"observed symbol {k} outside 0..{emission.shape[1] - 1}")
    return VecPotential.from_values(emission[:, k])


def fs_guided_sample(K, g: VecPotential, l: int, rng, z: Optional[float] = None) -> int:
    """Draw from the pmf proportional to ``K[l] * g``."""
    if z is None:
        z = rng.standard_normal()
    finite = np.isfinite(g.logg)
    shift = g.logg[finite].max()
    weights = np.asarray(K[l], dtype=float).ravel() * np.exp(g.logg - shift)
    return categorical_draw(weights, z, state=l)


def fs_guided_pmf(K, g: VecPotential, l: int) -> np.ndarray:
    weights = np.asarray(K[l], dtype=float).ravel() * np.exp(g.logg - g.logg[np.isfinite(g.logg)].max())
    total = weights.sum()
    if total <= 0:
        raise SamplingError("guided pmf has a zero normaliser", state=l)
    return weights / total


def fs_log_weight(K, K_aux, g: VecPotential, x: int) -> float:
    """``log <K g>_x - log <K_aux g>_x``."""
    numerator = log_matvec(np.asarray(K)[[int(x)]], g.logg)[0]
    aux_row = K_aux[[int(x)]]
    denominator = log_matvec(aux_row, g.logg)[0]
    if denominator == -np.inf:
        logger.warning(f"auxiliary pullback vanishes at state {x}")
        return -np.inf
    return float(numerator - denominator)
