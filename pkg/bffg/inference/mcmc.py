"""Metropolis-within-Gibbs over parameters and innovations.

The chain state is the parameter vector together with the innovations that
drive every guided edge; paths are a deterministic function of both. Path
moves are preconditioned Crank-Nicolson proposals on the innovations, which
leave their Gaussian law invariant, so the acceptance ratio is the ratio of
the path functionals ``Psi`` alone. Parameter moves are one-at-a-time random
walks that re-run the backward filter and re-map the current innovations.
A shared leaf variance can instead be proposed from its conjugate full
conditional, with a Metropolis correction for the re-mapped paths.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from bffg.engine.passes import BackwardPass, GuidedTrajectory, WeightLedger, run_backward, run_forward
from bffg.errors import BFFGError, ModelValidationError
from bffg.graph.template import ModelTemplate
from bffg.potentials.gaussian import GaussKernel

logger = logging.getLogger(__name__)

SCHEMA_LINE = '# bffg-schema-version: 1'


@dataclass
class InnovationSet:
    """Driving noise per guided edge; ``values[v] ~ N(0, scales[v]^2)`` elementwise."""
    values: Dict[int, Any]
    scales: Dict[int, float]

    def fresh(self, rng) -> 'InnovationSet':
        return InnovationSet(
            values={v: rng.standard_normal(np.shape(z)) * self.scales[v] for v, z in self.values.items()},
            scales=dict(self.scales),
        )

    def distance(self, other: 'InnovationSet') -> float:
        return math.sqrt(sum(float(np.sum((np.asarray(self.values[v]) - np.asarray(other.values[v])) ** 2))
                             for v in self.values))


@dataclass
class ChainState:
    theta: np.ndarray
    innovations: InnovationSet
    log_psi: float
    backward: BackwardPass
    trajectory: GuidedTrajectory
    ledger: WeightLedger


def _innovation_scalar(z) -> Any:
    return float(z) if np.ndim(z) == 0 else np.asarray(z, dtype=float)


def check_reparameterised(model) -> None:
    blocked = [e for e in model.edges if not model.is_leaf(e.target) and not e.kernel.reparameterised]
    if blocked:
        names = sorted({e.kernel.family for e in blocked})
        raise ModelValidationError(f"MCMC over innovations needs reparameterised kernels; not supported: {names}")


def draw_innovations(model, rng) -> InnovationSet:
    values, scales = {}, {}
    for v in model.forward_order():
        if model.is_leaf(v):
            continue
        kernel = model.in_edge(v).kernel
        values[v] = _innovation_scalar(kernel.draw_innovation(rng))
        scales[v] = float(kernel.innovation_scale)
    return InnovationSet(values=values, scales=scales)


def pcn_propose(innovations: InnovationSet, lam: float, rng) -> InnovationSet:
    """``Z' = lam Z + sqrt(1 - lam^2) W`` with ``W`` an independent copy of the innovation law."""
    if not 0.0 <= lam < 1.0:
        raise ModelValidationError(f"pCN parameter must lie in [0, 1), got {lam}")
    fresh = innovations.fresh(rng)
    rho = math.sqrt(1.0 - lam * lam)
    values = {v: _innovation_scalar(lam * np.asarray(z) + rho * np.asarray(fresh.values[v]))
              for v, z in innovations.values.items()}
    return InnovationSet(values=values, scales=dict(innovations.scales))


def evaluate(model, bp: BackwardPass, innovations: InnovationSet) -> Tuple[GuidedTrajectory, WeightLedger]:
    # every guided edge consumes its innovation, so the stream seed is irrelevant
    return run_forward(model, bp, 0, innovations=innovations.values)


def initial_state(template: ModelTemplate, theta, rng) -> ChainState:
    theta = np.asarray(theta, dtype=float)
    model = template.bind(theta)
    check_reparameterised(model)
    bp = run_backward(model)
    innovations = draw_innovations(model, rng)
    trajectory, ledger = evaluate(model, bp, innovations)
    if not np.isfinite(ledger.total):
        raise ModelValidationError("starting point has zero weight; choose other starting parameters")
    return ChainState(theta, innovations, ledger.total, bp, trajectory, ledger)


def mcmc_step_path(state: ChainState, lam: float, rng) -> Tuple[ChainState, bool]:
    proposal = pcn_propose(state.innovations, lam, rng)
    try:
        trajectory, ledger = evaluate(state.backward.model, state.backward, proposal)
    except BFFGError as e:
        logger.debug(f"path proposal rejected: {e}")
        return state, False
    log_psi = ledger.total
    if not np.isfinite(log_psi):
        logger.debug("path proposal rejected: non-finite Psi")
        return state, False
    if math.log(rng.random()) < log_psi - state.log_psi:
        return replace(state, innovations=proposal, log_psi=log_psi, trajectory=trajectory, ledger=ledger), True
    return state, False


def mcmc_step_theta(state: ChainState, template: ModelTemplate, steps: Sequence[float], rng,
                    blocks: Optional[Sequence[int]] = None) -> Tuple[ChainState, List[bool]]:
    """One random-walk update per parameter; invalid proposals are rejected."""
    accepted = []
    for i in (range(len(state.theta)) if blocks is None else blocks):
        if steps[i] <= 0:
            accepted.append(False)
            continue
        theta = state.theta.copy()
        theta[i] += steps[i] * rng.standard_normal()
        log_prior = template.log_prior(theta)
        if not np.isfinite(log_prior):
            accepted.append(False)
            continue
        try:
            model = template.bind(theta)
            bp = run_backward(model)
            trajectory, ledger = evaluate(model, bp, state.innovations)
        except (BFFGError, ValueError) as e:
            logger.debug(f"parameter proposal {template.parameter_names[i]}={theta[i]:.6g} rejected: {e}")
            accepted.append(False)
            continue
        log_psi = ledger.total
        log_a = log_psi - state.log_psi + log_prior - template.log_prior(state.theta)
        if np.isfinite(log_psi) and math.log(rng.random()) < log_a:
            state = ChainState(theta, state.innovations, log_psi, bp, trajectory, ledger)
            accepted.append(True)
        else:
            accepted.append(False)
    return state, accepted


def inverse_gamma_posterior(A: float, B: float, residuals: Sequence[np.ndarray]) -> Tuple[float, float]:
    """Shape and scale of the variance posterior for ``r ~ N(0, eps I)`` under ``IG(A, B)``."""
    residuals = [np.atleast_1d(np.asarray(r, dtype=float)) for r in residuals]
    n = sum(r.size for r in residuals)
    return A + 0.5 * n, B + 0.5 * sum(float(r @ r) for r in residuals)


def leaf_residuals(model, states: Mapping[int, Any]) -> List[np.ndarray]:
    out = []
    for v in model.leaves:
        kernel = model.in_edge(v).kernel
        if not isinstance(kernel, GaussKernel):
            raise ModelValidationError(f"leaf {v} is not a Gaussian emission")
        parent = model.in_edge(v).parents[0]
        out.append(np.atleast_1d(model.observation(v).value) - kernel.forward_mean(states[parent]))
    return out


def conjugate_update_obs_variance(state: ChainState, template: ModelTemplate, parameter: str,
                                  A: float, B: float, rng) -> Tuple[ChainState, bool]:
    """Metropolised conjugate update of the shared leaf variance under its ``IG(A, B)`` prior.

    The proposal is the inverse-gamma full conditional given the current
    vertex states. The innovations are kept, so the states move with the new
    backward pass; the acceptance ratio corrects for that with the reverse
    proposal density evaluated at the moved states.
    """
    i = template.index(parameter)
    current = float(state.theta[i])
    shape, scale = inverse_gamma_posterior(A, B, leaf_residuals(state.backward.model, state.trajectory.states))
    theta = state.theta.copy()
    theta[i] = float(stats.invgamma.rvs(shape, scale=scale, random_state=rng))
    try:
        model = template.bind(theta)
        bp = run_backward(model)
        trajectory, ledger = evaluate(model, bp, state.innovations)
    except BFFGError as e:
        logger.warning(f"variance update rejected: {e}")
        return state, False
    log_psi = ledger.total
    if not np.isfinite(log_psi):
        logger.warning("variance update produced a zero-weight path; keeping the previous value")
        return state, False
    back_shape, back_scale = inverse_gamma_posterior(A, B, leaf_residuals(model, trajectory.states))
    prior = stats.invgamma(A, scale=B)
    log_a = (log_psi - state.log_psi
             + prior.logpdf(theta[i]) - prior.logpdf(current)
             + stats.invgamma.logpdf(current, back_shape, scale=back_scale)
             - stats.invgamma.logpdf(theta[i], shape, scale=scale))
    if math.log(rng.random()) < log_a:
        return ChainState(theta, state.innovations, log_psi, bp, trajectory, ledger), True
    return state, False


def recompute_log_psi(state: ChainState, template: ModelTemplate) -> float:
    model = template.bind(state.theta)
    _, ledger = evaluate(model, run_backward(model), state.innovations)
    return ledger.total


@dataclass
class ChainSettings:
    iterations: int = 1000
    lam: float = 0.9
    steps: Optional[Sequence[float]] = None
    burnin: int = 0
    obs_variance: Optional[str] = None
    obs_prior: Tuple[float, float] = (2.0, 0.005)
    record_edges: bool = False
    theta: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ModelValidationError(f"iterations must be at least 1, got {self.iterations}")
        if not 0 <= self.burnin <= self.iterations:
            raise ModelValidationError(f"burn-in must lie in 0..{self.iterations}, got {self.burnin}")
        if not 0.0 <= self.lam < 1.0:
            raise ModelValidationError(f"pCN parameter must lie in [0, 1), got {self.lam}")


@dataclass
class ChainTrace:
    parameter_names: Tuple[str, ...]
    rows: List[Dict[str, float]] = field(default_factory=list)
    burnin: int = 0

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.rows).rename_axis('iteration')

    def samples(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows[self.burnin:]])

    def acceptance_rate(self, column: str = 'accept_path') -> float:
        values = [row[column] for row in self.rows[self.burnin:]]
        return float(np.mean(values)) if values else float('nan')

    def to_csv(self, path) -> None:
        with open(path, 'w', newline='') as handle:
            handle.write(SCHEMA_LINE + '\n')
            self.frame().to_csv(handle, index=True, float_format='%.10g')


def run_chain(template: ModelTemplate, settings: ChainSettings, rng) -> ChainTrace:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    names = template.parameter_names
    steps = settings.steps if settings.steps is not None else template.steps
    steps = np.full(len(names), 0.1) if steps is None else np.asarray(steps, dtype=float)
    if steps.shape != (len(names),):
        raise ModelValidationError(f"expected {len(names)} step sizes, got {steps.size}")
    if settings.obs_variance is not None:
        steps = steps.copy()
        steps[template.index(settings.obs_variance)] = 0.0
    theta = template.theta0 if settings.theta is None else np.asarray(settings.theta, dtype=float)
    state = initial_state(template, theta, rng)
    trace = ChainTrace(parameter_names=names, burnin=settings.burnin)
    logger.info(f"MCMC: {settings.iterations} iterations, lambda={settings.lam}, parameters {list(names)}")

    for it in range(settings.iterations):
        state, path_ok = mcmc_step_path(state, settings.lam, rng)
        state, theta_ok = mcmc_step_theta(state, template, steps, rng)
        if settings.obs_variance is not None:
            A, B = settings.obs_prior
            state, eps_ok = conjugate_update_obs_variance(state, template, settings.obs_variance, A, B, rng)
        row = dict(zip(names, state.theta.tolist()))
        row['log_psi'] = state.log_psi
        row['accept_path'] = int(path_ok)
        for name, ok in zip(names, theta_ok):
            row[f'accept_{name}'] = int(ok)
        if settings.obs_variance is not None:
            row[f'accept_{settings.obs_variance}'] = int(eps_ok)
        if settings.record_edges:
            for v, w in sorted(state.ledger.entries.items()):
                row[f'w_{v}'] = w
        trace.rows.append(row)
        if (it + 1) % max(1, settings.iterations // 10) == 0:
            logger.info(f"iteration {it + 1}/{settings.iterations}: log Psi {state.log_psi:.4f}, "
                        f"path acceptance {trace.acceptance_rate():.3f}")
    return trace
