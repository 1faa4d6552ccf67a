"""Gamma-increment processes on line graphs.

Along each edge ``X_t - X_s | X_s = x ~ Gamma(alpha, rate(x))``; the
auxiliary kernel uses a constant rate. Potentials are Gamma densities in the
remaining distance to the observed terminal value and are closed under
pullback but not under fusion, so models with this family cannot branch.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, ClassVar, Optional

import numpy as np
from scipy.special import roots_jacobi
from scipy.stats import gamma as gamma_dist

from bffg import config
from bffg.errors import DomainError, FamilyMismatchError, ModelValidationError, SamplingError
from bffg.potentials.base import EdgeDraw, Kernel, Potential

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GammaPotential(Potential):
    """``g(y) = psi(anchor - y; A, rate)`` with psi the Gamma density."""
    A: float
    rate: float
    anchor: float

    family: ClassVar[str] = 'gamma'
    fusable: ClassVar[bool] = False

    def __post_init__(self):
        if self.A <= 0 or self.rate <= 0:
            raise ModelValidationError(f"Gamma potential needs positive shape and rate, got ({self.A}, {self.rate})")

    def log_value(self, x) -> float:
        return float(gamma_dist.logpdf(self.anchor - float(x), self.A, scale=1.0 / self.rate))

    def describe(self) -> dict:
        return {'A': self.A, 'rate': self.rate, 'anchor': self.anchor}


class GammaKernel(Kernel):
    family: ClassVar[str] = 'gamma'
    message_type = GammaPotential
    target_type = GammaPotential

    def __init__(self, alpha: float, rate_aux: float, rate: Optional[Callable[[float], float]] = None,
                 weight_method: str = 'quadrature'):
        if alpha <= 0 or rate_aux <= 0:
            raise ModelValidationError(f"Gamma kernel needs positive shape and rate, got ({alpha}, {rate_aux})")
        if weight_method not in ('quadrature', 'montecarlo'):
            raise ModelValidationError(f"unknown Gamma weight method '{weight_method}'")
        self.alpha = float(alpha)
        self.rate_aux = float(rate_aux)
        self._rate = rate
        self.weight_method = weight_method

    def rate(self, x: float) -> float:
        value = self.rate_aux if self._rate is None else float(self._rate(float(x)))
        if not value > 0:
            raise ModelValidationError(f"Gamma rate must be positive, got {value} at x={x}")
        return value

    def pullback(self, g: GammaPotential) -> GammaPotential:
        return gamma_pullback(self, g)

    def log_integral(self, g: GammaPotential, x, rng=None) -> float:
        aux = gamma_pullback(self, g).log_value(x)
        return aux + gamma_log_weight(self, g, x, rng=rng, method=self.weight_method)

    def sample(self, g: GammaPotential, x, rng, innovation=None):
        return gamma_guided_sample(self, g, x, rng), None

    def guide(self, filt, x, rng, innovation=None, edge=None):
        y = gamma_guided_sample(self, filt.target, x, rng)
        # the Monte Carlo weight consumes the same stream, after the draw
        log_w = self.log_integral(filt.target, x, rng=rng) - filt.message.log_value(x)
        return EdgeDraw(state=y, log_weight=log_w)

    def init_leaf(self, value) -> GammaPotential:
        return GammaPotential(A=self.alpha, rate=self.rate_aux, anchor=float(value))

    def log_density(self, x, value) -> float:
        return float(gamma_dist.logpdf(float(value) - float(x), self.alpha, scale=1.0 / self.rate(x)))


# ============================================
# FAMILY OPERATIONS
# ============================================

def gamma_pullback(k: GammaKernel, g: GammaPotential) -> GammaPotential:
    if not math.isclose(g.rate, k.rate_aux, rel_tol=1e-12):
        raise FamilyMismatchError(f"Gamma potential rate {g.rate} differs from the auxiliary rate {k.rate_aux}")
    return GammaPotential(A=g.A + k.alpha, rate=g.rate, anchor=g.anchor)


def expbeta_sample(gamma1: float, gamma2: float, lam: float, rng, size: Optional[int] = None):
    """Exponentially tilted Beta draws, density proportional to z^(g1-1) (1-z)^(g2-1) exp(-lam z).

    Rejection from Beta(g1, g2) with acceptance ``exp(-lam z) / M`` where
    ``M = max(1, exp(-lam))``.
    """
    if gamma1 <= 0 or gamma2 <= 0:
        raise ModelValidationError(f"ExpBeta needs positive parameters, got ({gamma1}, {gamma2})")
    n = 1 if size is None else int(size)
    log_m = max(0.0, -lam)
    out = np.empty(n)
    filled = 0
    tries = 0
    batch = max(16, 2 * n)
    while filled < n:
        if tries >= config.REJECTION_CAP:
            raise SamplingError(f"ExpBeta rejection exceeded {config.REJECTION_CAP} tries",
                                diagnostics={'gamma1': gamma1, 'gamma2': gamma2, 'lambda': lam})
        z = rng.beta(gamma1, gamma2, size=batch)
        u = rng.random(batch)
        accepted = z[np.log(u) < -lam * z - log_m]
        take = min(accepted.size, n - filled)
        out[filled:filled + take] = accepted[:take]
        filled += take
        tries += batch
    return float(out[0]) if size is None else out


def gamma_xi(k: GammaKernel, g: GammaPotential, x: float) -> float:
    return (k.rate(x) - k.rate_aux) * (g.anchor - float(x))


def gamma_guided_sample(k: GammaKernel, g: GammaPotential, x: float, rng) -> float:
    """``y = x + Z (anchor - x)`` with ``Z ~ ExpBeta(alpha, A, xi(x))``."""
    x = float(x)
    if x >= g.anchor:
        raise DomainError(f"state {x} is not below the anchor {g.anchor}", state=x)
    z = expbeta_sample(k.alpha, g.A, gamma_xi(k, g, x), rng)
    y = x + z * (g.anchor - x)
    if not x < y < g.anchor:
        # z rounded to 0 or 1; nudge inside the open interval
        y = float(np.clip(y, np.nextafter(x, g.anchor), np.nextafter(g.anchor, x)))
    return y


def _beta_laplace_quadrature(a: float, b: float, xi: float, n: int) -> float:
    """``log E exp(-xi Z)`` for ``Z ~ Beta(a, b)`` by Gauss-Jacobi quadrature."""
    t, w = roots_jacobi(n, b - 1.0, a - 1.0)
    z = 0.5 * (t + 1.0)
    log_terms = np.log(w) - xi * z
    top = log_terms.max()
    return float(top + np.log(np.exp(log_terms - top).sum()) - np.log(w.sum()))


def gamma_log_weight(k: GammaKernel, g: GammaPotential, x: float, rng=None, method: str = 'quadrature',
                     n_draws: int = 1) -> float:
    """``alpha log(rate(x)/rate_aux) + log E exp(-xi(x) Z)``, ``Z ~ Beta(alpha, A)``.

    ``method='montecarlo'`` averages ``n_draws`` draws of ``exp(-xi Z)``, an
    unbiased estimate of the weight itself.
    """
    x = float(x)
    if x >= g.anchor:
        raise DomainError(f"state {x} is not below the anchor {g.anchor}", state=x)
    xi = gamma_xi(k, g, x)
    head = k.alpha * math.log(k.rate(x) / k.rate_aux)
    if xi == 0.0:
        return head
    if method == 'quadrature':
        return head + _beta_laplace_quadrature(k.alpha, g.A, xi, config.GJ_NODES)
    if method == 'montecarlo':
        if rng is None:
            raise ModelValidationError("Monte Carlo Gamma weights need a random stream")
        z = rng.beta(k.alpha, g.A, size=n_draws)
        log_terms = -xi * z
        top = log_terms.max()
        return head + float(top + np.log(np.mean(np.exp(log_terms - top))))
    raise ModelValidationError(f"unknown Gamma weight method '{method}'")
