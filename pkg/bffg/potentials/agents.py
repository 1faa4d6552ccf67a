"""SIS agent epidemic with count-indexed potentials.

Agents ``i = 1..N`` are susceptible (0) or infected (1). A susceptible agent
becomes infected with probability ``lam_i * a_i(x)`` where ``a_i`` is the
infected fraction of its neighbourhood; an infected agent stays infected with
probability ``1 - gam_i``. The auxiliary dynamics only see the infection count
``I(x)``, so potentials are vectors ``psi`` of length ``N + 1``.
"""
import logging
from dataclasses import dataclass
from typing import ClassVar, Optional, Sequence

import numpy as np
from scipy.stats import binom

from bffg.errors import FamilyMismatchError, ModelValidationError, NumericalError, SamplingError
from bffg.potentials.base import Kernel, Potential, log_dot, log_matvec

logger = logging.getLogger(__name__)


def poibin_pmf(probs) -> np.ndarray:
    """Poisson-binomial pmf by iterative convolution, O(n^2)."""
    probs = np.atleast_1d(np.asarray(probs, dtype=float))
    if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
        raise ModelValidationError("success probabilities must lie in [0, 1]")
    pmf = np.zeros(probs.size + 1)
    pmf[0] = 1.0
    for k, p in enumerate(probs, start=1):
        pmf[1:k + 1] = pmf[1:k + 1] * (1.0 - p) + pmf[:k] * p
        pmf[0] *= 1.0 - p
    return pmf


def _tail_table(probs: np.ndarray) -> np.ndarray:
    """``T[i, m] = P(sum_{l >= i} U_l = m)`` for independent ``U_l ~ Ber(probs[l])``."""
    n = probs.size
    T = np.zeros((n + 1, n + 1))
    T[n, 0] = 1.0
    for i in range(n - 1, -1, -1):
        p = probs[i]
        T[i] = (1.0 - p) * T[i + 1]
        T[i, 1:] += p * T[i + 1, :-1]
    return T


def condber_sample(probs, total: int, rng, state=None) -> np.ndarray:
    """Independent Bernoullis conditioned on their sum being ``total``."""
    probs = np.atleast_1d(np.asarray(probs, dtype=float))
    T = _tail_table(probs)
    if not 0 <= total <= probs.size or T[0, total] <= 0:
        raise SamplingError(f"count {total} has zero probability", state=state)
    y = np.zeros(probs.size, dtype=int)
    remaining = total
    for i, p in enumerate(probs):
        if remaining == 0:
            break
        p_one = p * T[i + 1, remaining - 1] / T[i, remaining]
        if rng.random() < p_one:
            y[i] = 1
            remaining -= 1
    return y


@dataclass(frozen=True, eq=False)
class CountPotential(Potential):
    """``g(x) = psi(I(x))`` with ``psi`` stored as logs."""
    logpsi: np.ndarray

    family: ClassVar[str] = 'count'

    def __post_init__(self):
        logpsi = np.atleast_1d(np.asarray(self.logpsi, dtype=float))
        if not np.any(np.isfinite(logpsi)):
            raise NumericalError("count potential vanishes identically")
        object.__setattr__(self, 'logpsi', logpsi)

    @property
    def N(self) -> int:
        return self.logpsi.size - 1

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.logpsi)

    def log_value(self, x) -> float:
        return float(self.logpsi[int(np.sum(x))])

    @classmethod
    def fuse_many(cls, potentials: Sequence['CountPotential']) -> 'CountPotential':
        return sis_fuse(potentials)

    def describe(self) -> dict:
        return {'log_psi': self.logpsi.tolist()}


class SISKernel(Kernel):
    family: ClassVar[str] = 'sis'
    message_type = CountPotential
    target_type = CountPotential

    def __init__(self, lam, gam, neighbors: Sequence[Sequence[int]], lam_aux: Optional[float] = None,
                 gam_aux: Optional[float] = None):
        self.lam = np.atleast_1d(np.asarray(lam, dtype=float))
        self.gam = np.atleast_1d(np.asarray(gam, dtype=float))
        self.N = self.lam.size
        if self.gam.size != self.N or len(neighbors) != self.N:
            raise ModelValidationError("lam, gam and neighbors must have one entry per agent")
        for name, p in (('lam', self.lam), ('gam', self.gam)):
            if np.any(p <= 0) or np.any(p >= 1):
                raise ModelValidationError(f"{name} must lie in (0, 1)")
        self.neighbors = [np.asarray(nb, dtype=int) for nb in neighbors]
        for i, nb in enumerate(self.neighbors):
            if np.any(nb < 0) or np.any(nb >= self.N):
                raise ModelValidationError(f"agent {i} has a neighbour outside 0..{self.N - 1}")
        # population means unless given
        self.lam_aux = float(np.mean(self.lam) if lam_aux is None else lam_aux)
        self.gam_aux = float(np.mean(self.gam) if gam_aux is None else gam_aux)
        if not (0 <= self.lam_aux <= 1 and 0 <= self.gam_aux <= 1):
            raise ModelValidationError("auxiliary rates must lie in [0, 1]")
        self._aux_matrix = None

    def pressure(self, x) -> np.ndarray:
        """``a_i(x)``: infected fraction of the neighbourhood, 0 for an empty one."""
        x = np.asarray(x, dtype=float)
        return np.array([x[nb].mean() if nb.size else 0.0 for nb in self.neighbors])

    def alpha(self, x) -> np.ndarray:
        """Per-agent probability of being infected at the next step."""
        x = np.asarray(x, dtype=int)
        return np.where(x == 1, 1.0 - self.gam, self.lam * self.pressure(x))

    def aux_alpha(self, infected: int, s: int) -> float:
        if infected:
            return 1.0 - self.gam_aux
        return self.lam_aux * s / self.N

    @property
    def aux_matrix(self) -> np.ndarray:
        """Row ``s``: law of the next count under the auxiliary kernel from count ``s``."""
        if self._aux_matrix is None:
            N = self.N
            M = np.zeros((N + 1, N + 1))
            for s in range(N + 1):
                z0 = binom.pmf(np.arange(N - s + 1), N - s, self.aux_alpha(0, s))
                z1 = binom.pmf(np.arange(s + 1), s, self.aux_alpha(1, s))
                M[s] = np.convolve(z0, z1)
            self._aux_matrix = M
        return self._aux_matrix

    def pullback(self, g: CountPotential) -> CountPotential:
        return sis_pullback(self, g)

    def log_integral(self, g: CountPotential, x) -> float:
        return log_dot(poibin_pmf(self.alpha(x)), g.logpsi)

    def sample(self, g: CountPotential, x, rng, innovation=None):
        return sis_guided_sample(self, g, x, rng), None


class SISReport(Kernel):
    """Leaf emission: each infected agent is reported independently with probability ``rho``."""
    family: ClassVar[str] = 'sis_report'
    message_type = CountPotential

    def __init__(self, N: int, rho: float):
        if not 0 <= rho <= 1:
            raise ModelValidationError(f"reporting probability must lie in [0, 1], got {rho}")
        self.N = int(N)
        self.rho = float(rho)

    def pullback(self, g):
        raise FamilyMismatchError("a reporting emission only appears on leaf edges")

    def init_leaf(self, value) -> CountPotential:
        return sis_init_leaf(int(value), self.rho, self.N)

    def log_density(self, x, value) -> float:
        return float(binom.logpmf(int(value), int(np.sum(x)), self.rho))


# ============================================
# FAMILY OPERATIONS
# ============================================

def sis_pullback(k: SISKernel, psi: CountPotential) -> CountPotential:
    """``psi2(s) = E psi(Z0 + Z1)`` with binomial blocks, one entry per count."""
    if psi.N != k.N:
        raise FamilyMismatchError(f"count potential for N={psi.N} pulled back through a kernel with N={k.N}")
    return CountPotential(log_matvec(k.aux_matrix, psi.logpsi))


def sis_fuse(potentials: Sequence[CountPotential]) -> CountPotential:
    potentials = list(potentials)
    sizes = {g.N for g in potentials}
    if len(sizes) != 1:
        raise FamilyMismatchError(f"cannot fuse count potentials for populations {sorted(sizes)}")
    return CountPotential(np.sum([g.logpsi for g in potentials], axis=0))


def sis_init_leaf(v: int, rho: float, N: int) -> CountPotential:
    """``psi(i) = Bin(v; i, rho)`` for ``i >= v`` and 0 below."""
    if not 0 <= v <= N:
        raise ModelValidationError(f"observed count {v} outside 0..{N}")
    counts = np.arange(N + 1)
    logpsi = np.full(N + 1, -np.inf)
    above = counts >= v
    logpsi[above] = binom.logpmf(v, counts[above], rho)
    return CountPotential(logpsi)


def sis_guided_pmf(k: SISKernel, psi: CountPotential, x) -> np.ndarray:
    """Stage-one law of the next infection count under the guided kernel."""
    pmf = poibin_pmf(k.alpha(x))
    finite = np.isfinite(psi.logpsi)
    weights = pmf * np.exp(psi.logpsi - psi.logpsi[finite].max())
    total = weights.sum()
    if total <= 0:
        raise SamplingError("guided count pmf has a zero normaliser", state=np.asarray(x))
    return weights / total


def sis_guided_sample(k: SISKernel, psi: CountPotential, x, rng) -> np.ndarray:
    """Draw the count, then the configuration given the count."""
    p = sis_guided_pmf(k, psi, x)
    j = int(rng.choice(p.size, p=p))
    return condber_sample(k.alpha(x), j, rng, state=np.asarray(x))


def sis_log_weight(k: SISKernel, psi: CountPotential, x, g_edge: Optional[CountPotential] = None) -> float:
    numerator = k.log_integral(psi, x)
    if g_edge is None:
        g_edge = sis_pullback(k, psi)
    denominator = g_edge.log_value(x)
    if denominator == -np.inf:
        logger.warning(f"auxiliary pullback vanishes at count {int(np.sum(x))}")
        return -np.inf
    return float(numerator - denominator)
