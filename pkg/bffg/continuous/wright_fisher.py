"""Wright-Fisher diffusions filtered in a shifted Chebyshev basis.

``dX = (beta1 (1 - X) + beta2 X) du + sqrt(X (1 - X)) dW`` on [0, 1]. The
generator maps polynomials of degree ``k`` to polynomials of degree at most
``k``, so with ``psi_k(x) = T_k(2x - 1)`` the backward equation becomes the
linear ODE ``lambda' = -Q lambda`` for an upper-triangular ``Q``. Fusion is a
pointwise product at the Chebyshev-Lobatto nodes and stays exact while the
total degree fits in the basis; in that regime the guided process has weight
exactly zero.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import ClassVar, Optional, Sequence

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial
from numpy.polynomial import chebyshev as C
from scipy.fft import dct
from scipy.stats import binom

from bffg import config
from bffg.errors import FamilyMismatchError, ModelValidationError, NumericalError, SamplingError
from bffg.potentials.base import EdgeDraw, EdgeFilter, Kernel, Potential

logger = logging.getLogger(__name__)

UNIT = [0.0, 1.0]


@dataclass(frozen=True)
class WFSpec:
    beta1: float
    beta2: float

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ModelValidationError(f"mutation rates must be non-negative, got ({self.beta1}, {self.beta2})")

    def drift(self, x):
        return self.beta1 * (1.0 - x) + self.beta2 * x

    @staticmethod
    def diffusivity(x):
        return x * (1.0 - x)


def lobatto_nodes(K: int) -> np.ndarray:
    """``x_j = (cos(pi j / K) + 1) / 2``, from 1 down to 0."""
    return 0.5 * (np.cos(np.pi * np.arange(K + 1) / K) + 1.0)


def coeffs_to_values(coeffs: np.ndarray) -> np.ndarray:
    K = coeffs.size - 1
    return C.chebval(2.0 * lobatto_nodes(K) - 1.0, coeffs)


def values_to_coeffs(values: np.ndarray) -> np.ndarray:
    """Inverse of :func:`coeffs_to_values` via a type-I cosine transform."""
    values = np.asarray(values, dtype=float)
    K = values.size - 1
    if K < 1:
        raise ModelValidationError("Chebyshev potentials need at least two nodes")
    coeffs = dct(values, type=1) / K
    coeffs[0] *= 0.5
    coeffs[K] *= 0.5
    return coeffs


def build_generator_matrix(wf: WFSpec, K: int) -> np.ndarray:
    """Column ``k`` holds the coordinates of ``b psi_k' + a psi_k'' / 2``."""
    if K < 1:
        raise ModelValidationError(f"basis size must be at least 1, got {K}")
    b = Polynomial([wf.beta1, wf.beta2 - wf.beta1]).convert(kind=Chebyshev, domain=UNIT)
    a = Polynomial([0.0, 1.0, -1.0]).convert(kind=Chebyshev, domain=UNIT)
    Q = np.zeros((K + 1, K + 1))
    for k in range(1, K + 1):
        psi = Chebyshev.basis(k, domain=UNIT)
        image = b * psi.deriv(1) + 0.5 * a * psi.deriv(2)
        coef = image.coef[:K + 1]
        Q[:coef.size, k] = coef
    return Q


@dataclass(frozen=True, eq=False)
class ChebPotential(Potential):
    """``g(x) = exp(log_scale) sum_k coeffs[k] psi_k(x)``.

    ``degree`` is the degree of the polynomial being represented; the
    representation is exact while ``degree <= K``.
    """
    coeffs: np.ndarray
    degree: int
    log_scale: float = 0.0

    family: ClassVar[str] = 'chebyshev'

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if coeffs.size < 2:
            raise ModelValidationError("Chebyshev potentials need K >= 1")
        object.__setattr__(self, 'coeffs', coeffs)

    @classmethod
    def from_values(cls, values: np.ndarray, degree: int, log_scale: float = 0.0) -> 'ChebPotential':
        values = np.asarray(values, dtype=float)
        top = float(np.abs(values).max())
        if top == 0 or not np.isfinite(top):
            raise NumericalError("Chebyshev potential vanishes at every node")
        return cls(values_to_coeffs(values / top), degree, log_scale + math.log(top))

    @property
    def K(self) -> int:
        return self.coeffs.size - 1

    @property
    def exact(self) -> bool:
        return self.degree <= self.K

    @property
    def values(self) -> np.ndarray:
        return coeffs_to_values(self.coeffs)

    def evaluate(self, x) -> np.ndarray:
        return C.chebval(2.0 * np.asarray(x, dtype=float) - 1.0, self.coeffs)

    def log_value(self, x) -> float:
        g = float(self.evaluate(float(x)))
        return math.log(g) + self.log_scale if g > 0 else -math.inf

    @classmethod
    def fuse_many(cls, potentials: Sequence['ChebPotential']) -> 'ChebPotential':
        return cheb_fuse(potentials)

    def describe(self) -> dict:
        return {'coeffs': self.coeffs.tolist(), 'degree': self.degree, 'log_scale': self.log_scale}


@dataclass(frozen=True, eq=False)
class ChebODEState:
    grid: np.ndarray
    coeffs: np.ndarray
    degree: int
    log_scale: float

    def potential(self, k: int) -> ChebPotential:
        return ChebPotential(self.coeffs[k], self.degree, self.log_scale)


# ============================================
# FAMILY OPERATIONS
# ============================================

def stable_steps(Q: np.ndarray, tau: float) -> int:
    """Grid size for RK4 on ``lambda' = -Q lambda`` with ``h |Q_kk| <= 1``."""
    stiff = float(np.abs(np.diag(Q)).max())
    return max(config.default_sde_steps(tau), math.ceil(tau * stiff))


def cheb_pullback(wf: WFSpec, g_t: ChebPotential, tau: float, M: Optional[int] = None, edge=None) -> ChebODEState:
    """RK4 for ``lambda' = -Q lambda`` from ``lambda(tau) = g_t.coeffs`` down to ``u = 0``."""
    Q = build_generator_matrix(wf, g_t.K)
    M = M or stable_steps(Q, tau)
    grid = np.linspace(0.0, tau, M + 1)
    lam = np.empty((M + 1, g_t.K + 1))
    lam[M] = g_t.coeffs
    h = tau / M
    for k in range(M, 0, -1):
        y = lam[k]
        k1 = Q @ y
        k2 = Q @ (y + 0.5 * h * k1)
        k3 = Q @ (y + 0.5 * h * k2)
        k4 = Q @ (y + h * k3)
        lam[k - 1] = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(lam[k - 1])):
            raise NumericalError(f"Chebyshev ODE overflowed at u={grid[k - 1]:.6g}", edge=edge,
                                 diagnostics={'K': g_t.K, 'tau': tau})
    return ChebODEState(grid=grid, coeffs=lam, degree=g_t.degree, log_scale=g_t.log_scale)


def cheb_fuse(potentials: Sequence[ChebPotential]) -> ChebPotential:
    potentials = list(potentials)
    sizes = {g.K for g in potentials}
    if len(sizes) != 1:
        raise FamilyMismatchError(f"cannot fuse Chebyshev potentials with K in {sorted(sizes)}")
    values = np.prod([g.values for g in potentials], axis=0)
    degree = sum(g.degree for g in potentials)
    if degree > potentials[0].K:
        logger.warning(f"fused degree {degree} exceeds K={potentials[0].K}; the product is aliased")
    return ChebPotential.from_values(values, degree, sum(g.log_scale for g in potentials))


def cheb_init_leaf(n: int, v: int, K: int) -> ChebPotential:
    """``C(n, v) x^v (1 - x)^(n - v)`` at the Lobatto nodes."""
    if not 0 <= v <= n:
        raise ModelValidationError(f"observed count {v} outside 0..{n}")
    if K < 1:
        raise ModelValidationError(f"basis size must be at least 1, got {K}")
    if n > K:
        logger.warning(f"leaf degree {n} exceeds K={K}; the leaf potential is projected")
    return ChebPotential.from_values(binom.pmf(v, n, lobatto_nodes(K)), degree=n)


def default_basis_size(leaf_sizes: Sequence[int]) -> int:
    """Smallest power of two holding the product of all leaf potentials."""
    total = max(1, int(sum(leaf_sizes)))
    return 1 << (total - 1).bit_length() if total > 1 else 2


@dataclass(frozen=True, eq=False)
class WFPath:
    times: np.ndarray
    states: np.ndarray
    innovations: np.ndarray
    log_weight: float = 0.0

    @property
    def end(self) -> float:
        return float(self.states[-1])


def wf_guided_simulate(wf: WFSpec, ode: ChebODEState, x0: float, rng,
                       innovations: Optional[np.ndarray] = None, edge=None) -> WFPath:
    """Euler-Maruyama with drift ``b + a d/dx log g(u, .)``, clamped to ``[eps, 1 - eps]``."""
    eps = config.WF_CLAMP
    grid = ode.grid
    M = grid.size - 1
    if innovations is None:
        innovations = rng.standard_normal(M) * np.sqrt(np.diff(grid))
    innovations = np.asarray(innovations, dtype=float).ravel()
    if innovations.size != M:
        raise ModelValidationError(f"expected {M} innovations, got {innovations.size}")
    x = float(np.clip(x0, eps, 1.0 - eps))
    states = np.empty(M + 1)
    states[0] = x
    for k in range(M):
        dt = grid[k + 1] - grid[k]
        series = Chebyshev(ode.coeffs[k], domain=UNIT)
        g = float(series(x))
        if not g > 0:
            raise SamplingError(f"potential is not positive at x={x:.6g}, u={grid[k]:.6g}", state=x, edge=edge)
        a = wf.diffusivity(x)
        score = float(series.deriv(1)(x)) / g
        x = x + (wf.drift(x) + a * score) * dt + math.sqrt(a) * innovations[k]
        x = min(max(x, eps), 1.0 - eps)
        states[k + 1] = x
    return WFPath(times=grid, states=states, innovations=innovations)


class WFKernel(Kernel):
    family: ClassVar[str] = 'wright_fisher'
    continuous: ClassVar[bool] = True
    message_type = ChebPotential
    target_type = ChebPotential

    def __init__(self, wf: WFSpec, tau: float, n_steps: Optional[int] = None):
        if not tau > 0:
            raise ModelValidationError(f"continuous edge needs a positive duration, got {tau}")
        self.wf = wf
        self.tau = float(tau)
        self.n_steps = n_steps

    def pullback(self, g: ChebPotential) -> ChebPotential:
        return cheb_pullback(self.wf, g, self.tau, self.n_steps).potential(0)

    def backward(self, g: ChebPotential, edge=None) -> EdgeFilter:
        ode = cheb_pullback(self.wf, g, self.tau, self.n_steps, edge=edge)
        return EdgeFilter(message=ode.potential(0), target=g, state=ode)

    def guide(self, filt: EdgeFilter, x, rng, innovation=None, edge=None) -> EdgeDraw:
        ode: ChebODEState = filt.state
        if not filt.target.exact:
            raise ModelValidationError(f"edge {edge}: Chebyshev potential of degree {filt.target.degree} "
                                       f"does not fit K={filt.target.K}; guided weights are unavailable")
        path = wf_guided_simulate(self.wf, ode, float(x), rng, innovations=innovation, edge=edge)
        # the generator of the guided process leaves an exact polynomial potential harmonic
        path = replace(path, log_weight=0.0)
        return EdgeDraw(state=path.end, log_weight=0.0, path=path, innovation=path.innovations)


class BinomialEmission(Kernel):
    """Leaf emission ``v ~ Bin(n, x)`` from an allele frequency ``x``."""
    family: ClassVar[str] = 'binomial'
    message_type = ChebPotential

    def __init__(self, n: int, K: int):
        if n < 0:
            raise ModelValidationError(f"sample size must be non-negative, got {n}")
        self.n = int(n)
        self.K = int(K)

    def pullback(self, g):
        raise FamilyMismatchError("a binomial emission only appears on leaf edges")

    def init_leaf(self, value) -> ChebPotential:
        return cheb_init_leaf(self.n, int(value), self.K)

    def log_density(self, x, value) -> float:
        return float(binom.logpmf(int(value), self.n, float(x)))
