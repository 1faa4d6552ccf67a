"""Models with free parameters.

A :class:`ModelTemplate` rebuilds the concrete :class:`DirectedGraphModel`
for every parameter vector ``theta``; parameter vectors are ordered like
``parameter_names``.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from bffg.errors import ModelValidationError
from bffg.graph.model import DirectedGraphModel

logger = logging.getLogger(__name__)

PRIOR_KINDS = ('flat', 'normal', 'uniform', 'lognormal', 'inverse_gamma', 'half_normal')


@dataclass(frozen=True)
class Prior:
    kind: str = 'flat'
    params: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ModelValidationError(f"unknown prior '{self.kind}', expected one of {PRIOR_KINDS}")
        object.__setattr__(self, 'params', tuple(float(p) for p in self.params))

    def logpdf(self, value: float) -> float:
        p = self.params
        if self.kind == 'flat':
            return 0.0
        if self.kind == 'normal':
            return float(stats.norm.logpdf(value, p[0], p[1]))
        if self.kind == 'uniform':
            return float(stats.uniform.logpdf(value, p[0], p[1] - p[0]))
        if self.kind == 'lognormal':
            return float(stats.lognorm.logpdf(value, p[1], scale=math.exp(p[0])))
        if self.kind == 'half_normal':
            return float(stats.halfnorm.logpdf(value, scale=p[0]))
        return float(stats.invgamma.logpdf(value, p[0], scale=p[1]))


@dataclass
class ModelTemplate:
    builder: Callable[[Mapping[str, float]], DirectedGraphModel]
    parameter_names: Sequence[str]
    start: Sequence[float]
    priors: Dict[str, Prior] = field(default_factory=dict)
    name: str = 'model'
    # random-walk step per parameter for MCMC
    steps: Optional[Sequence[float]] = None

    def __post_init__(self):
        self.parameter_names = tuple(self.parameter_names)
        if len(set(self.parameter_names)) != len(self.parameter_names):
            raise ModelValidationError(f"duplicate parameter names in {self.parameter_names}")
        if len(self.start) != len(self.parameter_names):
            raise ModelValidationError(
                f"{len(self.parameter_names)} parameters but {len(self.start)} starting values"
            )
        unknown = set(self.priors) - set(self.parameter_names)
        if unknown:
            raise ModelValidationError(f"priors for undeclared parameters: {sorted(unknown)}")
        if self.steps is not None and len(self.steps) != len(self.parameter_names):
            raise ModelValidationError(f"{len(self.parameter_names)} parameters but {len(self.steps)} step sizes")

    @classmethod
    def from_file(cls, path) -> 'ModelTemplate':
        from bffg.schemas.model_file import load_model_file
        return load_model_file(path).template()

    @property
    def theta0(self) -> np.ndarray:
        return np.asarray(self.start, dtype=float)

    @property
    def free_parameters(self) -> Tuple[str, ...]:
        return self.parameter_names

    def as_mapping(self, theta) -> Dict[str, float]:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (len(self.parameter_names),):
            raise ModelValidationError(f"expected {len(self.parameter_names)} parameters, got {theta.size}")
        return dict(zip(self.parameter_names, theta.tolist()))

    def bind(self, theta=None) -> DirectedGraphModel:
        return self.builder(self.as_mapping(self.theta0 if theta is None else theta))

    def log_prior(self, theta) -> float:
        values = self.as_mapping(theta)
        return float(sum(self.priors.get(k, Prior()).logpdf(v) for k, v in values.items()))

    def index(self, name: str) -> int:
        try:
            return self.parameter_names.index(name)
        except ValueError:
            raise ModelValidationError(f"unknown parameter '{name}'") from None


def fixed_template(model: DirectedGraphModel) -> ModelTemplate:
    """Template without free parameters around an already concrete model."""
    return ModelTemplate(builder=lambda theta: model, parameter_names=(), start=(), name=model.name)


def parse_theta(text: Optional[str], template: ModelTemplate) -> np.ndarray:
    """``'1.0,0.5'`` (positional) or ``'theta0=1.0,sigma=0.5'`` (named, others at their start values)."""
    if text is None or not text.strip():
        return template.theta0
    parts = [p.strip() for p in text.split(',') if p.strip()]
    theta = template.theta0.copy()
    try:
        if all('=' in p for p in parts):
            for p in parts:
                key, value = (s.strip() for s in p.split('=', 1))
                theta[template.index(key)] = float(value)
            return theta
        values = [float(p) for p in parts]
    except ValueError as e:
        raise ModelValidationError(f"cannot parse parameters '{text}': {e}") from None
    if len(values) != len(template.parameter_names):
        raise ModelValidationError(f"expected {len(template.parameter_names)} parameters, got {len(values)}")
    return np.asarray(values, dtype=float)
