"""Nonlinear-Gaussian kernels with linear-Gaussian auxiliary kernels.

Potentials are ``g(x) = exp(c + F'x - x'Hx/2)`` stored as the triple
``(c, F, H)``. The constant ``c`` is always carried along.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, ClassVar, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import multivariate_normal

from bffg import config
from bffg.errors import FamilyMismatchError, ModelValidationError, NumericalError
from bffg.potentials.base import Kernel, Potential

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _cholesky(M: np.ndarray, what: str, edge=None):
    try:
        return linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError as e:
        with np.errstate(all='ignore'):
            cond = float(np.linalg.cond(M))
        raise NumericalError(f"{what} is not positive definite: {e}", edge=edge, diagnostics={'cond': cond})


def _logdet(chol) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol[0]))))


def _inverse(chol) -> np.ndarray:
    return linalg.cho_solve(chol, np.eye(chol[0].shape[0]))


@dataclass(frozen=True, eq=False)
class GaussPotential(Potential):
    c: float
    F: np.ndarray
    H: np.ndarray

    family: ClassVar[str] = 'gaussian'

    def __post_init__(self):
        F = np.atleast_1d(np.asarray(self.F, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if H.shape != (F.size, F.size):
            raise ModelValidationError(f"H has shape {H.shape}, expected {(F.size, F.size)}")
        object.__setattr__(self, 'c', float(self.c))
        object.__setattr__(self, 'F', F)
        object.__setattr__(self, 'H', H)

    @property
    def dim(self) -> int:
        return self.F.size

    def log_value(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.c + self.F @ x - 0.5 * x @ self.H @ x)

    @classmethod
    def fuse_many(cls, potentials: Sequence['GaussPotential']) -> 'GaussPotential':
        return gauss_fuse(potentials)

    @classmethod
    def uninformative(cls, dim: int) -> 'GaussPotential':
        return cls(0.0, np.zeros(dim), np.zeros((dim, dim)))

    def shifted(self, delta: float) -> 'GaussPotential':
        return GaussPotential(self.c + delta, self.F, self.H)

    def describe(self) -> dict:
        return {'c': self.c, 'F': self.F.tolist(), 'H': self.H.tolist()}


class GaussKernel(Kernel):
    """``y | x ~ N(mean(x), cov(x))`` with auxiliary ``N(Phi x + beta, Q)``.

    Without ``mean``/``cov`` the forward kernel equals the auxiliary one. Phi
    may be rectangular (observation of fewer coordinates, or the concatenated
    parent states of a collider).
    """
    family: ClassVar[str] = 'gaussian'
    message_type = GaussPotential
    target_type = GaussPotential

    def __init__(
        self,
        Phi,
        beta,
        Q,
        mean: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        cov: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        self.Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
        self.beta = np.atleast_1d(np.asarray(beta, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        d_out, d_in = self.Phi.shape
        if self.beta.shape != (d_out,) or self.Q.shape != (d_out, d_out):
            raise ModelValidationError(
                f"inconsistent Gaussian kernel: Phi {self.Phi.shape}, beta {self.beta.shape}, Q {self.Q.shape}"
            )
        _cholesky(self.Q, "auxiliary covariance Q")
        self.mean = mean
        self.cov = cov

    @classmethod
    def linear(cls, Phi, beta, Q) -> 'GaussKernel':
        return cls(Phi, beta, Q)

    @property
    def in_size(self) -> int:
        return self.Phi.shape[1]

    @property
    def out_size(self) -> int:
        return self.Phi.shape[0]

    @property
    def is_exact(self) -> bool:
        return self.mean is None and self.cov is None

    def forward_mean(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.mean is None:
            return self.Phi @ x + self.beta
        return np.atleast_1d(np.asarray(self.mean(x), dtype=float))

    def forward_cov(self, x) -> np.ndarray:
        if self.cov is None:
            return self.Q
        return np.atleast_2d(np.asarray(self.cov(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float))

    def pullback(self, g: GaussPotential) -> GaussPotential:
        return gauss_pullback(self, g)

    def log_integral(self, g: GaussPotential, x) -> float:
        return log_gauss_integral(g, self.forward_mean(x), self.forward_cov(x))

    def sample(self, g: GaussPotential, x, rng, innovation=None):
        if innovation is None:
            innovation = self.draw_innovation(rng)
        return gauss_guided_sample(self, g, x, rng, innovation), innovation

    def init_leaf(self, value) -> GaussPotential:
        return gauss_init_leaf(value, self.Phi, self.beta, self.Q)

    def log_density(self, x, value) -> float:
        return float(multivariate_normal.logpdf(np.atleast_1d(value), self.forward_mean(x), self.forward_cov(x)))

    def draw_innovation(self, rng):
        return rng.standard_normal(self.out_size)

    @property
    def reparameterised(self) -> bool:
        return True


# ============================================
# FAMILY OPERATIONS
# ============================================

def log_gauss_integral(g: GaussPotential, m: np.ndarray, Q: np.ndarray) -> float:
    """log of the integral of g(y) N(y; m, Q) dy.

    Written with Q^{-1} and P = H + Q^{-1} only, so singular H is allowed.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if m.size != g.dim:
        raise FamilyMismatchError(f"potential of dimension {g.dim} integrated against a {m.size}-dimensional kernel")
    q_chol = _cholesky(Q, "kernel covariance")
    Q_inv = _inverse(q_chol)
    p_chol = _cholesky(_symmetrize(g.H + Q_inv), "H + Q^-1 (potential not integrable)")
    v = g.F + Q_inv @ m
    return float(
        g.c
        - 0.5 * (_logdet(q_chol) + _logdet(p_chol))
        + 0.5 * v @ linalg.cho_solve(p_chol, v)
        - 0.5 * m @ Q_inv @ m
    )


def gauss_pullback(k: GaussKernel, g: GaussPotential, edge=None) -> GaussPotential:
    """Pull ``g`` back through the auxiliary kernel ``N(Phi x + beta, Q)``."""
    if g.dim != k.out_size:
        raise FamilyMismatchError(f"potential of dimension {g.dim} pulled back through a kernel into dimension {k.out_size}")
    Phi, beta, Q = k.Phi, k.beta, k.Q

    h_chol = None
    with np.errstate(all='ignore'):
        cond = float(np.linalg.cond(g.H)) if g.dim else 1.0
    if math.isfinite(cond) and cond <= config.H_COND_GATE:
        try:
            h_chol = linalg.cho_factor(g.H, lower=True)
        except linalg.LinAlgError:
            h_chol = None

    if h_chol is not None:
        H_inv = _inverse(h_chol)
        mu = linalg.cho_solve(h_chol, g.F)
        C = _symmetrize(Q + H_inv)
        c_chol = _cholesky(C, "C = Q + H^-1", edge=edge)
        C_inv = _inverse(c_chol)
        H_bar = Phi.T @ C_inv @ Phi
        F_bar = Phi.T @ C_inv @ (mu - beta)
        # log phi_can(0; F, H) and log phi(beta; H^-1 F, C)
        log_can0 = -0.5 * g.dim * LOG_2PI + 0.5 * _logdet(h_chol) - 0.5 * g.F @ mu
        r = beta - mu
        log_phi = -0.5 * g.dim * LOG_2PI - 0.5 * _logdet(c_chol) - 0.5 * r @ linalg.cho_solve(c_chol, r)
        c_bar = g.c - log_can0 + log_phi
    else:
        logger.debug(f"gauss_pullback: cond(H)={cond:.3g}, using (QH+I)^-1 identities")
        q_chol = _cholesky(Q, "auxiliary covariance Q", edge=edge)
        Q_inv = _inverse(q_chol)
        p_chol = _cholesky(_symmetrize(g.H + Q_inv), "H + Q^-1", edge=edge)
        P_inv = _inverse(p_chol)
        H_hat = _symmetrize(Q_inv - Q_inv @ P_inv @ Q_inv)  # (Q + H^-1)^-1
        L = Q_inv @ P_inv @ g.F                              # (QH + I)^-1 F
        c0 = g.c - 0.5 * (_logdet(q_chol) + _logdet(p_chol)) + 0.5 * g.F @ P_inv @ g.F
        H_bar = Phi.T @ H_hat @ Phi
        F_bar = Phi.T @ (L - H_hat @ beta)
        c_bar = c0 + beta @ L - 0.5 * beta @ H_hat @ beta

    return GaussPotential(float(c_bar), F_bar, _symmetrize(H_bar))


def gauss_fuse(potentials: Sequence[GaussPotential]) -> GaussPotential:
    potentials = list(potentials)
    dims = {g.dim for g in potentials}
    if len(dims) != 1:
        raise FamilyMismatchError(f"cannot fuse Gaussian potentials of dimensions {sorted(dims)}")
    return GaussPotential(
        sum(g.c for g in potentials),
        sum(g.F for g in potentials),
        sum(g.H for g in potentials),
    )


def gauss_init_leaf(v, Phi, beta, Q) -> GaussPotential:
    """Potential equal to ``x -> N(v; Phi x + beta, Q)``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    q_chol = _cholesky(Q, "observation covariance")
    r = v - beta
    c = -0.5 * v.size * LOG_2PI - 0.5 * _logdet(q_chol) - 0.5 * r @ linalg.cho_solve(q_chol, r)
    F = Phi.T @ linalg.cho_solve(q_chol, r)
    H = Phi.T @ linalg.cho_solve(q_chol, Phi)
    return GaussPotential(float(c), F, _symmetrize(H))


def gauss_guided_sample(k: GaussKernel, g: GaussPotential, x, rng, innovation=None) -> np.ndarray:
    """Draw from ``N_can(F + Q(x)^-1 mu(x), H + Q(x)^-1)``."""
    m = k.forward_mean(x)
    q_chol = _cholesky(k.forward_cov(x), "forward covariance Q(x)")
    Q_inv = _inverse(q_chol)
    p_chol = _cholesky(_symmetrize(g.H + Q_inv), "guided precision H + Q(x)^-1")
    mean = linalg.cho_solve(p_chol, g.F + Q_inv @ m)
    z = rng.standard_normal(m.size) if innovation is None else np.asarray(innovation, dtype=float)
    # precision = L L', so L'^-1 z has covariance precision^-1
    return mean + linalg.solve_triangular(p_chol[0].T, z, lower=False)


def gauss_log_weight(k: GaussKernel, g: GaussPotential, g_edge: GaussPotential, x) -> float:
    """``log (kappa g)(x) - log g_edge(x)`` with g_edge the auxiliary pullback."""
    return k.log_integral(g, x) - g_edge.log_value(x)

