"""Interacting particle systems filtered by backward diagonalisation.

The auxiliary dynamics move each of the ``n`` particles independently with a
state-independent matrix ``K_aux[i]``, so the backward pass runs ``n``
separate line-graph filters and potentials factorise as ``n x R`` log-arrays.
The guided forward pass still uses the interacting matrices ``K_i(x)``.
"""
import logging
from dataclasses import dataclass
from typing import Callable, ClassVar, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from bffg.errors import FamilyMismatchError, ModelValidationError, NumericalError, SamplingError
from bffg.potentials.base import Kernel, Potential
from bffg.potentials.finite import check_stochastic

logger = logging.getLogger(__name__)

MatrixStack = np.ndarray  # shape (n, R, R')


def _row_shifted(logg: np.ndarray):
    finite = np.where(np.isfinite(logg), logg, -np.inf)
    shift = finite.max(axis=1, keepdims=True)
    return np.exp(logg - shift), shift[:, 0]


@dataclass(frozen=True, eq=False)
class FactorizedPotential(Potential):
    """``g(x) = prod_i g_i(x_i)``, one log-vector per particle."""
    logg: np.ndarray

    family: ClassVar[str] = 'particles'

    def __post_init__(self):
        logg = np.atleast_2d(np.asarray(self.logg, dtype=float))
        if not np.all(np.any(np.isfinite(logg), axis=1)):
            raise NumericalError("a particle potential vanishes identically")
        object.__setattr__(self, 'logg', logg)

    @property
    def n(self) -> int:
        return self.logg.shape[0]

    @property
    def n_states(self) -> int:
        return self.logg.shape[1]

    def log_value(self, x) -> float:
        x = np.asarray(x, dtype=int)
        return float(self.logg[np.arange(self.n), x].sum())

    @classmethod
    def fuse_many(cls, potentials: Sequence['FactorizedPotential']) -> 'FactorizedPotential':
        return particle_fuse(potentials)

    def describe(self) -> dict:
        return {'log_g': self.logg.tolist()}


class ParticleSystemKernel(Kernel):
    """Particle-wise matrices ``K_i(x)`` (a callable of the configuration or a fixed stack)."""
    family: ClassVar[str] = 'particles'
    message_type = FactorizedPotential
    target_type = FactorizedPotential

    def __init__(self, forward: Union[Callable[[np.ndarray], MatrixStack], MatrixStack], aux: MatrixStack):
        if callable(aux):
            raise ModelValidationError("particle auxiliary matrices must not depend on the configuration")
        self.aux = np.asarray(aux, dtype=float)
        if self.aux.ndim != 3:
            raise ModelValidationError(f"auxiliary matrices must have shape (n, R, R'), got {self.aux.shape}")
        check_stochastic(self.aux, 'K_aux')
        if callable(forward):
            self._forward = forward
        else:
            stack = np.asarray(forward, dtype=float)
            if stack.shape != self.aux.shape:
                raise ModelValidationError(f"forward stack {stack.shape} does not match auxiliary {self.aux.shape}")
            check_stochastic(stack, 'K')
            self._forward = lambda x, _stack=stack: _stack

    @property
    def n(self) -> int:
        return self.aux.shape[0]

    def forward(self, x) -> MatrixStack:
        stack = np.asarray(self._forward(np.asarray(x, dtype=int)), dtype=float)
        if stack.shape != self.aux.shape:
            raise ModelValidationError(f"K(x) has shape {stack.shape}, expected {self.aux.shape}")
        return stack

    def pullback(self, g: FactorizedPotential) -> FactorizedPotential:
        return particle_pullback(self.aux, g)

    def log_integral(self, g: FactorizedPotential, x) -> float:
        return _log_row_integrals(self.forward(x), g, x)

    def sample(self, g: FactorizedPotential, x, rng, innovation=None):
        if innovation is None:
            innovation = self.draw_innovation(rng)
        return particle_guided_sample(self, g, x, rng, z=innovation), innovation

    def init_leaf(self, value) -> FactorizedPotential:
        return particle_init_leaf(value, self.aux.shape[1], emission=self.aux)

    def log_density(self, x, value) -> float:
        stack = self.forward(x)
        x = np.asarray(x, dtype=int)
        value = np.asarray(value, dtype=int)
        with np.errstate(divide='ignore'):
            return float(np.log(stack[np.arange(self.n), x, value]).sum())

    def draw_innovation(self, rng):
        return rng.standard_normal(self.n)

    @property
    def reparameterised(self) -> bool:
        return True


def _log_row_integrals(stack: MatrixStack, g: FactorizedPotential, x) -> float:
    x = np.asarray(x, dtype=int)
    rows = stack[np.arange(g.n), x]          # (n, R)
    vals, shift = _row_shifted(g.logg)
    with np.errstate(divide='ignore'):
        return float(np.sum(np.log(np.einsum('ir,ir->i', rows, vals)) + shift))


# ============================================
# FAMILY OPERATIONS
# ============================================

def particle_pullback(aux: MatrixStack, g: FactorizedPotential) -> FactorizedPotential:
    """Per-particle ``K_aux[i] g_i``; memory stays ``n x R``."""
    if aux.shape[0] != g.n or aux.shape[2] != g.n_states:
        raise FamilyMismatchError(f"auxiliary stack {aux.shape} does not match potential {g.logg.shape}")
    vals, shift = _row_shifted(g.logg)
    with np.errstate(divide='ignore'):
        return FactorizedPotential(np.log(np.einsum('irs,is->ir', aux, vals)) + shift[:, None])


def particle_fuse(potentials: Sequence[FactorizedPotential]) -> FactorizedPotential:
    potentials = list(potentials)
    shapes = {g.logg.shape for g in potentials}
    if len(shapes) != 1:
        raise FamilyMismatchError(f"cannot fuse particle potentials of shapes {sorted(shapes)}")
    return FactorizedPotential(np.sum([g.logg for g in potentials], axis=0))


def particle_init_leaf(config, n_states: int, emission: Optional[MatrixStack] = None) -> FactorizedPotential:
    config = np.asarray(config, dtype=int)
    n = config.size
    if emission is None:
        if np.any(config < 0) or np.any(config >= n_states):
            raise ModelValidationError(f"observed configuration outside 0..{n_states - 1}")
        logg = np.full((n, n_states), -np.inf)
        logg[np.arange(n), config] = 0.0
        return FactorizedPotential(logg)
    emission = np.asarray(emission, dtype=float)
    if np.any(config < 0) or np.any(config >= emission.shape[2]):
        raise ModelValidationError(f"observed configuration outside 0..{emission.shape[2] - 1}")
    with np.errstate(divide='ignore'):
        return FactorizedPotential(np.log(emission[np.arange(n), :, config]))


def particle_guided_pmf(kernel: ParticleSystemKernel, g: FactorizedPotential, x) -> np.ndarray:
    """Per-particle guided pmfs, shape ``(n, R)``; the joint pmf is their product."""
    x = np.asarray(x, dtype=int)
    rows = kernel.forward(x)[np.arange(g.n), x]
    vals, _ = _row_shifted(g.logg)
    weights = rows * vals
    totals = weights.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise SamplingError("a particle has a zero guided normaliser", state=x)
    return weights / totals


def particle_guided_sample(kernel: ParticleSystemKernel, g: FactorizedPotential, x, rng, z=None) -> np.ndarray:
    pmf = particle_guided_pmf(kernel, g, x)
    if z is None:
        z = rng.standard_normal(g.n)
    u = ndtr(np.asarray(z, dtype=float))
    cdf = np.cumsum(pmf, axis=1)
    draws = (cdf <= u[:, None]).sum(axis=1)
    draws = np.minimum(draws, g.n_states - 1)
    for i in np.flatnonzero(pmf[np.arange(g.n), draws] <= 0):
        draws[i] = int(np.flatnonzero(pmf[i] > 0).max())
    return draws


def particle_log_weight(kernel: ParticleSystemKernel, g: FactorizedPotential, x) -> float:
    """``sum_i log <K_i(x) g_i>_{x_i} - log <K_aux_i g_i>_{x_i}``."""
    return _log_row_integrals(kernel.forward(x), g, x) - _log_row_integrals(kernel.aux, g, x)
