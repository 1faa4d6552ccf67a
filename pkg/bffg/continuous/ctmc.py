"""Continuous-time Markov chains on finite state spaces.

The potential on an edge of length ``tau`` is ``g(u) = expm(Q_aux (tau - u)) g_t``.
It is evaluated by dense ``expm`` per block, and by uniformization once the
state space is too large for dense matrices. Guided paths are simulated by
thinning against piecewise-constant rate bounds.
"""
import logging
from dataclasses import dataclass
from typing import ClassVar, List, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import expm
from scipy.stats import poisson

from bffg import config
from bffg.errors import ModelValidationError, NumericalError, SamplingError
from bffg.potentials.base import EdgeDraw, EdgeFilter, Kernel
from bffg.potentials.finite import VecPotential

logger = logging.getLogger(__name__)

RATE_TOL = 1e-10
# redraws of one grid interval after its rate bound failed
MAX_BOUND_RAISES = 50
UNIFORMIZATION_TAIL = 1e-16
# halvings of the last grid interval towards the endpoint
END_REFINEMENT = 20


def check_rate_matrix(Q, name: str = 'Q') -> None:
    dense = Q.toarray() if sparse.issparse(Q) else np.asarray(Q, dtype=float)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise ModelValidationError(f"{name} must be square, got shape {dense.shape}")
    off = dense - np.diag(np.diag(dense))
    if np.any(off < 0):
        raise ModelValidationError(f"{name} has negative off-diagonal rates")
    scale = max(1.0, float(np.abs(dense).max()))
    worst = float(np.abs(dense.sum(axis=1)).max())
    if worst > RATE_TOL * scale:
        raise ModelValidationError(f"{name} rows must sum to 0 (worst deviation {worst:.3g})")


def uniformized_action(Q, v: np.ndarray, t: float) -> np.ndarray:
    """``expm(Q t) v`` by uniformization; ``Q`` may be sparse."""
    v = np.asarray(v, dtype=float)
    diag = Q.diagonal() if sparse.issparse(Q) else np.diag(Q)
    rate = float(np.max(-diag)) if diag.size else 0.0
    if rate <= 0 or t == 0:
        return v.copy()
    P = (sparse.identity(Q.shape[0], format='csr') + sparse.csr_matrix(Q) / rate) if sparse.issparse(Q) \
        else np.eye(Q.shape[0]) + np.asarray(Q) / rate
    mu = rate * t
    n_terms = int(poisson.isf(UNIFORMIZATION_TAIL, mu)) + 2
    weights = poisson.pmf(np.arange(n_terms + 1), mu)
    out = weights[0] * v
    term = v
    for k in range(1, n_terms + 1):
        term = P @ term
        out = out + weights[k] * term
    return np.asarray(out, dtype=float)


class _DenseBlock:
    """Evaluator for ``expm(Q s) v`` on one block at each entry of ``s``."""

    def __init__(self, Q: np.ndarray, v: np.ndarray):
        self.Q = Q
        self.v = v

    def __call__(self, s: np.ndarray) -> np.ndarray:
        if not np.any(self.Q):
            return np.broadcast_to(self.v, (s.size, self.v.size)).copy()
        return np.array([expm(self.Q * si) @ self.v for si in s])


class CTMCPotential:
    """``g(u, .)`` on an edge, evaluated on demand.

    Values are kept relative to ``exp(shift)`` so that terminal log-vectors
    with a large dynamic range stay representable.
    """
    family: ClassVar[str] = 'ctmc'

    def __init__(self, Q_aux, g_t: VecPotential, tau: float, blocks: Optional[Sequence[Sequence[int]]] = None):
        check_rate_matrix(Q_aux, 'Q_aux')
        R = Q_aux.shape[0]
        if g_t.size != R:
            raise ModelValidationError(f"terminal potential has length {g_t.size}, rate matrix has {R} states")
        self.Q_aux = Q_aux
        self.terminal = g_t
        self.tau = float(tau)
        finite = np.isfinite(g_t.logg)
        self.shift = float(g_t.logg[finite].max())
        self.terminal_values = np.exp(g_t.logg - self.shift)
        self.blocks = [np.asarray(b, dtype=int) for b in blocks] if blocks else None
        self.method = 'uniformization' if R > config.CTMC_DENSE_MAX else 'dense'
        if self.method == 'dense':
            dense = Q_aux.toarray() if sparse.issparse(Q_aux) else np.asarray(Q_aux, dtype=float)
            groups = self.blocks if self.blocks is not None else [np.arange(R)]
            self._check_blocks(dense, groups)
            self._evaluators = [(idx, _DenseBlock(dense[np.ix_(idx, idx)], self.terminal_values[idx]))
                                for idx in groups]

    @staticmethod
    def _check_blocks(dense: np.ndarray, groups: List[np.ndarray]) -> None:
        covered = np.concatenate(groups)
        if np.sort(covered).tolist() != list(range(dense.shape[0])):
            raise ModelValidationError("blocks must partition the state space")
        mask = np.zeros(dense.shape, dtype=bool)
        for idx in groups:
            mask[np.ix_(idx, idx)] = True
        if np.any(dense[~mask] != 0):
            raise ModelValidationError("auxiliary rate matrix is not block diagonal in the given blocks")

    @property
    def n_states(self) -> int:
        return self.terminal_values.size

    def values(self, u) -> np.ndarray:
        """Scaled ``g(u, .)``; shape ``(R,)`` for scalar ``u`` or ``(len(u), R)``."""
        scalar = np.ndim(u) == 0
        s = self.tau - np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(s < -1e-12):
            raise ModelValidationError(f"time outside the edge [0, {self.tau}]")
        s = np.maximum(s, 0.0)
        if self.method == 'dense':
            out = np.empty((s.size, self.n_states))
            for idx, evaluate in self._evaluators:
                out[:, idx] = evaluate(s)
        else:
            out = np.array([uniformized_action(self.Q_aux, self.terminal_values, si) for si in s])
        out = np.maximum(out, 0.0)
        return out[0] if scalar else out

    def log_values(self, u) -> np.ndarray:
        with np.errstate(divide='ignore'):
            return np.log(self.values(u)) + self.shift

    def at(self, u: float) -> VecPotential:
        return VecPotential(self.log_values(u))

    def describe(self) -> dict:
        return {'tau': self.tau, 'method': self.method, 'log_g0': self.log_values(0.0).tolist()}


@dataclass(frozen=True, eq=False)
class JumpPath:
    """Right-continuous path: ``states[i]`` holds on ``[times[i], times[i+1])``; ``times[0] = 0``."""
    times: np.ndarray
    states: np.ndarray
    tau: float
    log_weight: float = 0.0

    @property
    def end(self) -> int:
        return int(self.states[-1])

    @property
    def n_jumps(self) -> int:
        return self.states.size - 1


@dataclass
class CTMCEdgeState:
    """Backward record of one edge; ``bounds`` is filled on the first guided draw."""
    potential: CTMCPotential
    bounds: Optional[tuple] = None


# ============================================
# FAMILY OPERATIONS
# ============================================

def ctmc_pullback(Q_aux, g_t: VecPotential, tau: float, blocks=None) -> CTMCPotential:
    return CTMCPotential(Q_aux, g_t, tau, blocks=blocks)


def guided_generator(Q: np.ndarray, potential: CTMCPotential, u: float) -> np.ndarray:
    """``q(x, y) g(u, y) / g(u, x)`` off the diagonal, rows summing to zero."""
    g = potential.values(u)
    with np.errstate(divide='ignore', invalid='ignore'):
        G = np.asarray(Q) * (g[None, :] / g[:, None])
    G[~np.isfinite(G)] = 0.0
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


def _exit_rates(Q: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Total guided exit rates at each row of ``G`` (values at several times)."""
    off = Q - np.diag(np.diag(Q))
    with np.errstate(divide='ignore', invalid='ignore'):
        rates = (G @ off.T) / G
    return np.where(np.isfinite(rates), rates, 0.0)


def thinning_grid(tau: float) -> np.ndarray:
    grid = np.linspace(0.0, tau, config.CTMC_GRID)
    step = grid[1] - grid[0]
    tail = tau - step * 2.0 ** -np.arange(1, END_REFINEMENT + 1)
    return np.unique(np.concatenate([grid[:-1], tail]))


def thinning_bounds(Q: np.ndarray, potential: CTMCPotential):
    """Per-interval upper bounds on the guided exit rate from each state.

    The grid is refined geometrically towards ``tau`` where rates into a
    pinned endpoint grow like ``1 / (tau - u)``. The last point stops short
    of ``tau`` and a path must already sit in the terminal support there.
    """
    grid = thinning_grid(potential.tau)
    mids = 0.5 * (grid[1:] + grid[:-1])
    edges_rates = _exit_rates(Q, potential.values(grid))
    mid_rates = _exit_rates(Q, potential.values(mids))
    bounds = config.CTMC_SAFETY * np.maximum(np.maximum(edges_rates[:-1], edges_rates[1:]), mid_rates)
    return grid, bounds


def ctmc_guided_simulate(Q, potential: CTMCPotential, x0: int, rng, bounds=None, edge=None) -> JumpPath:
    """Thinning with rates ``q(x, y) g(u, y) / g(u, x)``.

    A candidate time whose guided rate exceeds the interval's bound raises
    that bound in place and redraws the interval from its start.
    """
    Q = Q.toarray() if sparse.issparse(Q) else np.asarray(Q, dtype=float)
    x = int(x0)
    if potential.values(0.0)[x] <= 0:
        raise SamplingError("potential vanishes at the starting state", state=x, edge=edge)
    grid, bound = bounds if bounds is not None else thinning_bounds(Q, potential)
    off = Q - np.diag(np.diag(Q))
    times, states = [0.0], [x]
    t = 0.0
    for j in range(grid.size - 1):
        end = grid[j + 1]
        start_x, start_len = x, len(times)
        raises = 0
        while True:
            lam = bound[j, x]
            if lam <= 0:
                break
            t_next = t + rng.exponential(1.0 / lam)
            if t_next >= end:
                break
            t = t_next
            g = potential.values(t)
            if g[x] <= 0:
                raise SamplingError(f"potential vanishes along the path at u={t:.6g}", state=x, edge=edge)
            rates = off[x] * g / g[x]
            total = rates.sum()
            if total > lam:
                raises += 1
                if raises > MAX_BOUND_RAISES:
                    raise NumericalError(f"guided rate keeps exceeding the thinning bound near u={t:.6g}", edge=edge)
                logger.debug(f"edge {edge}: guided rate {total:.4g} exceeded bound {lam:.4g} at u={t:.6g}, redrawing")
                bound[j, x] = max(2.0 * lam, config.CTMC_SAFETY * total)
                t, x = grid[j], start_x
                del times[start_len:], states[start_len:]
                continue
            if rng.random() * lam < total:
                x = int(rng.choice(rates.size, p=rates / total))
                times.append(t)
                states.append(x)
        t = end
    if potential.terminal_values[x] <= 0:
        # the sliver between the last grid point and tau is not simulated
        raise SamplingError("guided path ended outside the support of the terminal potential", state=x, edge=edge)
    return JumpPath(times=np.asarray(times), states=np.asarray(states, dtype=int), tau=potential.tau)


def ctmc_log_weight(Q, Q_aux, potential: CTMCPotential, path: JumpPath, edge=None) -> float:
    """Gauss-Legendre integral of ``sum_y (q - q_aux)(x, y) g(u, y) / g(u, x)`` between jumps."""
    Q = Q.toarray() if sparse.issparse(Q) else np.asarray(Q, dtype=float)
    Q_aux = Q_aux.toarray() if sparse.issparse(Q_aux) else np.asarray(Q_aux, dtype=float)
    D = Q - Q_aux
    if not np.any(D):
        return 0.0
    nodes, weights = np.polynomial.legendre.leggauss(config.GL_NODES)
    starts = path.times
    ends = np.append(path.times[1:], path.tau)
    half = 0.5 * (ends - starts)
    us = (starts + half)[:, None] + half[:, None] * nodes[None, :]
    G = potential.values(us.ravel()).reshape(us.shape + (potential.n_states,))
    x = path.states
    with np.errstate(divide='ignore', invalid='ignore'):
        integrand = np.einsum('iy,iny->in', D[x], G) / G[np.arange(x.size), :, x]
    total = float(np.sum(half * (integrand @ weights)))
    if not np.isfinite(total):
        logger.warning(f"edge {edge}: non-finite CTMC log-weight integrand")
        return -np.inf
    return total


class CTMCKernel(Kernel):
    family: ClassVar[str] = 'ctmc'
    continuous: ClassVar[bool] = True
    message_type = VecPotential
    target_type = VecPotential

    def __init__(self, Q, tau: float, Q_aux=None, blocks=None):
        if not tau > 0:
            raise ModelValidationError(f"continuous edge needs a positive duration, got {tau}")
        self.Q = Q if sparse.issparse(Q) else np.asarray(Q, dtype=float)
        self.Q_aux = self.Q if Q_aux is None else (Q_aux if sparse.issparse(Q_aux) else np.asarray(Q_aux, dtype=float))
        check_rate_matrix(self.Q, 'Q')
        check_rate_matrix(self.Q_aux, 'Q_aux')
        if self.Q.shape != self.Q_aux.shape:
            raise ModelValidationError(f"Q {self.Q.shape} and Q_aux {self.Q_aux.shape} differ in shape")
        self.tau = float(tau)
        self.blocks = blocks

    @property
    def dense_Q(self) -> np.ndarray:
        return self.Q.toarray() if sparse.issparse(self.Q) else self.Q

    def pullback(self, g: VecPotential) -> VecPotential:
        return ctmc_pullback(self.Q_aux, g, self.tau, self.blocks).at(0.0)

    def backward(self, g: VecPotential, edge=None) -> EdgeFilter:
        try:
            potential = ctmc_pullback(self.Q_aux, g, self.tau, self.blocks)
        except NumericalError as e:
            raise NumericalError(str(e), edge=edge) from e
        return EdgeFilter(message=potential.at(0.0), target=g, state=CTMCEdgeState(potential))

    def guide(self, filt: EdgeFilter, x, rng, innovation=None, edge=None) -> EdgeDraw:
        record: CTMCEdgeState = filt.state
        potential = record.potential
        if record.bounds is None:
            # depends on the forward rates, so computed on first use rather than in the backward pass
            record.bounds = thinning_bounds(self.dense_Q, potential)
        path = ctmc_guided_simulate(self.Q, potential, int(x), rng, bounds=record.bounds, edge=edge)
        log_w = ctmc_log_weight(self.Q, self.Q_aux, potential, path, edge=edge)
        path = JumpPath(times=path.times, states=path.states, tau=path.tau, log_weight=log_w)
        return EdgeDraw(state=path.end, log_weight=log_w, path=path)
