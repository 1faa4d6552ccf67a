"""Continuous edges carrying SDEs guided by a linear auxiliary process.

On an edge of length ``tau`` the potential ``g(u, x) = exp(c + F'x - x'Hx/2)``
is propagated backwards by RK4 on a fixed uniform grid; the guided process is
simulated by Euler-Maruyama on the same grid, and the grid's Wiener
increments are kept so the MCMC sampler can move them.
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, ClassVar, Optional, Union

import numpy as np

from bffg import config
from bffg.errors import ModelValidationError, NumericalError
from bffg.potentials.base import EdgeDraw, EdgeFilter, Kernel
from bffg.potentials.gaussian import GaussPotential

logger = logging.getLogger(__name__)

ArrayOrFn = Union[np.ndarray, Callable[[float], np.ndarray]]


def _const_or_fn(value: ArrayOrFn, ndmin: int) -> Callable[[float], np.ndarray]:
    if callable(value):
        return value
    arr = np.asarray(value, dtype=float)
    arr = np.atleast_2d(arr) if ndmin == 2 else np.atleast_1d(arr)
    return lambda u, _arr=arr: _arr


@dataclass(frozen=True)
class SDESpec:
    """``dX = b(u, X) du + sigma(u, X) dW``."""
    drift: Callable[[float, np.ndarray], np.ndarray]
    dispersion: Callable[[float, np.ndarray], np.ndarray]

    @classmethod
    def linear(cls, B, beta, sigma) -> 'SDESpec':
        B_fn, beta_fn, sigma_fn = _const_or_fn(B, 2), _const_or_fn(beta, 1), _const_or_fn(sigma, 2)
        return cls(lambda u, x: B_fn(u) @ x + beta_fn(u), lambda u, x: sigma_fn(u))

    def b(self, u: float, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.drift(u, x), dtype=float))

    def sigma(self, u: float, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.dispersion(u, x), dtype=float))


class LinearAuxSpec:
    """``dX = (B(u) X + beta(u)) du + sigma_aux(u) dW``; each term constant or a function of u."""

    def __init__(self, B: ArrayOrFn, beta: ArrayOrFn, sigma: ArrayOrFn):
        self._B = _const_or_fn(B, 2)
        self._beta = _const_or_fn(beta, 1)
        self._sigma = _const_or_fn(sigma, 2)
        d = self.B(0.0).shape[0]
        if self.B(0.0).shape != (d, d) or self.beta(0.0).shape != (d,) or self.sigma(0.0).shape[0] != d:
            raise ModelValidationError("inconsistent auxiliary SDE dimensions")
        self.dim = d

    def B(self, u: float) -> np.ndarray:
        return self._B(u)

    def beta(self, u: float) -> np.ndarray:
        return self._beta(u)

    def sigma(self, u: float) -> np.ndarray:
        return self._sigma(u)

    def a(self, u: float) -> np.ndarray:
        s = self.sigma(u)
        return s @ s.T

    def drift(self, u: float, x: np.ndarray) -> np.ndarray:
        return self.B(u) @ x + self.beta(u)


@dataclass(frozen=True, eq=False)
class BackwardODEState:
    grid: np.ndarray
    c: np.ndarray
    F: np.ndarray
    H: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    def potential(self, k: int) -> GaussPotential:
        return GaussPotential(self.c[k], self.F[k], self.H[k])

    def log_g(self, k: int, x: np.ndarray) -> float:
        return float(self.c[k] + self.F[k] @ x - 0.5 * x @ self.H[k] @ x)


@dataclass(frozen=True, eq=False)
class GuidedPath:
    times: np.ndarray
    states: np.ndarray
    innovations: np.ndarray
    log_weight: float = 0.0

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]


# ============================================
# BACKWARD FILTER
# ============================================

def _backward_rhs(aux: LinearAuxSpec, u: float, c: float, F: np.ndarray, H: np.ndarray):
    B, beta, a = aux.B(u), aux.beta(u), aux.a(u)
    dH = -B.T @ H - H @ B + H @ a @ H
    dF = -B.T @ F + H @ a @ F + H @ beta
    # Sign fixed by requiring d/du g + L_aux g = 0 for g = exp(c + F'x - x'Hx/2).
    dc = -(beta @ F + 0.5 * F @ a @ F - 0.5 * np.trace(H @ a))
    return dc, dF, dH


def solve_backward_odes(aux: LinearAuxSpec, terminal: GaussPotential, tau: float, M: int,
                        edge=None) -> BackwardODEState:
    """Classical RK4 from ``u = tau`` down to ``u = 0`` on ``M`` uniform steps."""
    if M < 2:
        raise ModelValidationError(f"backward ODE needs at least 2 steps, got {M}")
    if terminal.dim != aux.dim:
        raise ModelValidationError(f"terminal potential has dimension {terminal.dim}, process has {aux.dim}")
    grid = np.linspace(0.0, tau, M + 1)
    d = aux.dim
    c = np.empty(M + 1)
    F = np.empty((M + 1, d))
    H = np.empty((M + 1, d, d))
    c[M], F[M], H[M] = terminal.c, terminal.F, terminal.H

    for k in range(M, 0, -1):
        u, h = grid[k], grid[k] - grid[k - 1]
        y = (c[k], F[k], H[k])
        k1 = _backward_rhs(aux, u, *y)
        y2 = tuple(yi - 0.5 * h * ki for yi, ki in zip(y, k1))
        k2 = _backward_rhs(aux, u - 0.5 * h, *y2)
        y3 = tuple(yi - 0.5 * h * ki for yi, ki in zip(y, k2))
        k3 = _backward_rhs(aux, u - 0.5 * h, *y3)
        y4 = tuple(yi - h * ki for yi, ki in zip(y, k3))
        k4 = _backward_rhs(aux, u - h, *y4)
        c[k - 1], F[k - 1], Hn = (
            yi - h / 6.0 * (a + 2 * b + 2 * cc + dd) for yi, a, b, cc, dd in zip(y, k1, k2, k3, k4)
        )
        H[k - 1] = 0.5 * (Hn + Hn.T)
        norm = float(np.abs(H[k - 1]).max())
        if not np.isfinite(norm) or norm > config.H_BLOWUP or not np.isfinite(c[k - 1]):
            raise NumericalError(f"backward ODE blew up at u={grid[k - 1]:.6g} (|H|={norm:.3g})", edge=edge,
                                 diagnostics={'u': float(grid[k - 1]), 'norm_H': norm})
    return BackwardODEState(grid=grid, c=c, F=F, H=H)


def edge_potential_at_zero(bode: BackwardODEState) -> GaussPotential:
    return bode.potential(0)


# ============================================
# GUIDED FORWARD SIMULATION
# ============================================

def sde_guided_simulate(sde: SDESpec, bode: BackwardODEState, x0, rng,
                        innovations: Optional[np.ndarray] = None, edge=None) -> GuidedPath:
    """Euler-Maruyama for ``dX = (b + a (F - H X)) du + sigma dW`` on the backward grid."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if not np.all(np.isfinite(x)):
        raise NumericalError("guided SDE started from a non-finite state", edge=edge)
    grid = bode.grid
    M = grid.size - 1
    m = sde.sigma(grid[0], x).shape[1]
    if innovations is None:
        dt = np.diff(grid)
        innovations = rng.standard_normal((M, m)) * np.sqrt(dt)[:, None]
    innovations = np.asarray(innovations, dtype=float)
    if innovations.shape != (M, m):
        raise ModelValidationError(f"innovations have shape {innovations.shape}, expected {(M, m)}")

    states = np.empty((M + 1, x.size))
    states[0] = x
    for k in range(M):
        u, dt = grid[k], grid[k + 1] - grid[k]
        s = sde.sigma(u, x)
        r = bode.F[k] - bode.H[k] @ x
        x = x + (sde.b(u, x) + s @ (s.T @ r)) * dt + s @ innovations[k]
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"guided SDE produced a non-finite state at u={grid[k + 1]:.6g}", edge=edge,
                                 diagnostics={'u': float(grid[k + 1])})
        states[k + 1] = x
    return GuidedPath(times=grid, states=states, innovations=innovations)


def sde_log_weight(sde: SDESpec, aux: LinearAuxSpec, bode: BackwardODEState, path: GuidedPath,
                   edge=None) -> float:
    """Left-endpoint sum of ``sum_i (b_i - bt_i) r_i + 1/2 sum_ij (a - at)_ij (r_i r_j - H_ij)``."""
    if path.times.size != bode.grid.size:
        raise ModelValidationError("path and backward ODE use different grids")
    total = 0.0
    for k in range(bode.grid.size - 1):
        u, dt = bode.grid[k], bode.grid[k + 1] - bode.grid[k]
        x = path.states[k]
        r = bode.F[k] - bode.H[k] @ x
        s = sde.sigma(u, x)
        da = s @ s.T - aux.a(u)
        db = sde.b(u, x) - aux.drift(u, x)
        total += (db @ r + 0.5 * np.sum(da * (np.outer(r, r) - bode.H[k]))) * dt
    if not np.isfinite(total):
        logger.warning(f"edge {edge}: non-finite SDE log-weight integrand")
        return -np.inf
    return float(total)


class SDEKernel(Kernel):
    family: ClassVar[str] = 'sde'
    continuous: ClassVar[bool] = True
    message_type = GaussPotential
    target_type = GaussPotential

    def __init__(self, sde: SDESpec, aux: LinearAuxSpec, tau: float, n_steps: Optional[int] = None):
        if not tau > 0:
            raise ModelValidationError(f"continuous edge needs a positive duration, got {tau}")
        self.sde = sde
        self.aux = aux
        self.tau = float(tau)
        self.n_steps = int(n_steps) if n_steps else config.default_sde_steps(self.tau)

    @property
    def dt(self) -> float:
        return self.tau / self.n_steps

    @property
    def innovation_shape(self):
        return (self.n_steps, self.sde.sigma(0.0, np.zeros(self.aux.dim)).shape[1])

    def pullback(self, g: GaussPotential) -> GaussPotential:
        return edge_potential_at_zero(solve_backward_odes(self.aux, g, self.tau, self.n_steps))

    def backward(self, g: GaussPotential, edge=None) -> EdgeFilter:
        bode = solve_backward_odes(self.aux, g, self.tau, self.n_steps, edge=edge)
        return EdgeFilter(message=edge_potential_at_zero(bode), target=g, state=bode)

    def guide(self, filt: EdgeFilter, x, rng, innovation=None, edge=None) -> EdgeDraw:
        path = sde_guided_simulate(self.sde, filt.state, x, rng, innovations=innovation, edge=edge)
        log_w = sde_log_weight(self.sde, self.aux, filt.state, path, edge=edge)
        path = replace(path, log_weight=log_w)
        return EdgeDraw(state=path.end.copy(), log_weight=log_w, path=path, innovation=path.innovations)

    def draw_innovation(self, rng):
        return rng.standard_normal(self.innovation_shape) * np.sqrt(self.dt)

    @property
    def innovation_scale(self) -> float:
        return float(np.sqrt(self.dt))

    @property
    def reparameterised(self) -> bool:
        return True
