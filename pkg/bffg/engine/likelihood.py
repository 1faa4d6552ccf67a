import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from bffg.engine.passes import WeightLedger, resolve_model, run_backward, run_forward
from bffg.errors import ModelValidationError

logger = logging.getLogger(__name__)


@dataclass
class LikelihoodEstimate:
    """Monte Carlo likelihood estimate kept in log space.

    ``log_se`` is the delta-method standard error of ``log_mean``, i.e. the
    relative standard error of the estimate itself.
    """
    log_mean: float
    log_se: float
    n_samples: int
    degenerate: bool
    log_weights: np.ndarray

    @property
    def mean(self) -> float:
        return math.exp(self.log_mean)

    @property
    def se(self) -> float:
        return self.mean * self.log_se

    @property
    def effective_sample_size(self) -> float:
        if self.degenerate:
            return 0.0
        w = np.exp(self.log_weights - self.log_weights.max())
        return float(w.sum() ** 2 / np.sum(w ** 2))


def summarize_log_weights(log_weights) -> LikelihoodEstimate:
    lw = np.asarray(log_weights, dtype=float)
    n = lw.size
    if n < 1:
        raise ModelValidationError("need at least one sample")
    if not np.any(np.isfinite(lw)):
        logger.warning(f"all {n} guided samples have zero weight; the estimate is degenerate")
        return LikelihoodEstimate(-math.inf, math.inf, n, True, lw)
    log_mean = float(logsumexp(lw) - math.log(n))
    ratio = np.exp(lw - log_mean)
    log_se = float(np.std(ratio, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return LikelihoodEstimate(log_mean, log_se, n, False, lw)


def estimate_likelihood(model, theta=None, n_samples: int = 1000, rng=0) -> LikelihoodEstimate:
    """Average of ``exp(ledger total)`` over ``n_samples`` guided draws from one backward pass."""
    if n_samples < 1:
        raise ModelValidationError(f"n_samples must be at least 1, got {n_samples}")
    model = resolve_model(model, theta)
    bp = run_backward(model)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    totals = np.empty(n_samples)
    for i in range(n_samples):
        _, ledger = run_forward(model, bp, rng)
        totals[i] = ledger.total
    estimate = summarize_log_weights(totals)
    logger.info(f"log-likelihood {estimate.log_mean:.6g} (se {estimate.log_se:.3g}) from {n_samples} samples")
    return estimate
