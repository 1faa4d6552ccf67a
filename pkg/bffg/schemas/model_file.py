# bffg/schemas/model_file.py
"""JSON model files.

Any scalar field, and any entry of a vector or matrix field, may name a
parameter instead of giving a number; ``"-theta0"`` negates it. Free
parameters become the coordinates of ``theta``; fixed ones are substituted
when the model is built.
"""
import json
import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import sparse

from bffg.continuous.ctmc import CTMCKernel
from bffg.continuous.sde import LinearAuxSpec, SDEKernel, SDESpec
from bffg.continuous.wright_fisher import BinomialEmission, WFKernel, WFSpec, default_basis_size
from bffg.engine.dag import JointFiniteKernel, JointGaussKernel
from bffg.errors import ModelValidationError
from bffg.graph.model import DirectedGraphModel, Edge
from bffg.graph.template import ModelTemplate, Prior
from bffg.potentials.agents import SISKernel, SISReport
from bffg.potentials.finite import FiniteKernel
from bffg.potentials.gamma import GammaKernel
from bffg.potentials.gaussian import GaussKernel

logger = logging.getLogger(__name__)

Scalar = Union[float, str]
Vector = List[Scalar]
Matrix = List[List[Scalar]]
Tensor = List[Any]


# ============================================
# PARAMETERS
# ============================================

class PriorSpec(BaseModel):
    kind: Literal['flat', 'normal', 'uniform', 'lognormal', 'inverse_gamma', 'half_normal'] = 'flat'
    params: List[float] = []


class ParameterSpec(BaseModel):
    value: float
    free: bool = True
    prior: PriorSpec = PriorSpec()
    step: float = 0.1


# ============================================
# EDGES
# ============================================

class EdgeBase(BaseModel):
    model_config = ConfigDict(extra='forbid')

    parents: Union[int, List[int]]
    target: int


class FiniteEdge(EdgeBase):
    family: Literal['finite']
    K: Matrix
    K_aux: Optional[Matrix] = None
    sparse_aux: bool = False


class FiniteJointEdge(EdgeBase):
    family: Literal['finite_joint']
    K: Tensor
    K_aux: Optional[Tensor] = None
    prior: Optional[Tensor] = None


class GaussianEdge(EdgeBase):
    family: Literal['gaussian']
    Phi: Matrix
    beta: Vector
    Q: Matrix
    mean: Literal['linear', 'tanh'] = 'linear'
    # forward mean tanh(A x) + beta; A defaults to Phi
    A: Optional[Matrix] = None
    cov: Optional[Matrix] = None


class GaussianJointEdge(EdgeBase):
    family: Literal['gaussian_joint']
    parent_dims: List[int]
    Phi: Matrix
    beta: Vector
    Q: Matrix
    prior_mean: Vector
    prior_cov: Matrix


class SDEEdge(EdgeBase):
    family: Literal['sde']
    tau: Scalar
    drift: Literal['linear', 'tanh_coupled'] = 'linear'
    B: Matrix
    beta: Vector
    sigma: Matrix
    aux_B: Optional[Matrix] = None
    aux_beta: Optional[Vector] = None
    aux_sigma: Optional[Matrix] = None
    n_steps: Optional[int] = None


class CTMCEdge(EdgeBase):
    family: Literal['ctmc']
    tau: Scalar
    Q: Matrix
    Q_aux: Optional[Matrix] = None
    blocks: Optional[List[List[int]]] = None


class GammaEdge(EdgeBase):
    family: Literal['gamma']
    alpha: Scalar
    rate_aux: Scalar
    rate: Literal['constant', 'sine'] = 'constant'
    # rate(x) = rate_aux * (1 + amplitude * sin(x)) for 'sine'
    amplitude: Scalar = 0.0
    weight_method: Literal['quadrature', 'montecarlo'] = 'quadrature'


class SISEdge(EdgeBase):
    family: Literal['sis']
    lam: Vector
    gam: Vector
    neighbors: List[List[int]]
    lam_aux: Optional[Scalar] = None
    gam_aux: Optional[Scalar] = None


class SISReportEdge(EdgeBase):
    family: Literal['sis_report']
    N: int
    rho: Scalar


class WrightFisherEdge(EdgeBase):
    family: Literal['wright_fisher']
    tau: Scalar
    beta1: Scalar
    beta2: Scalar
    n_steps: Optional[int] = None


class BinomialEdge(EdgeBase):
    family: Literal['binomial']
    n: int
    K: Optional[int] = None


EdgeSpec = Annotated[
    Union[FiniteEdge, FiniteJointEdge, GaussianEdge, GaussianJointEdge, SDEEdge, CTMCEdge, GammaEdge,
          SISEdge, SISReportEdge, WrightFisherEdge, BinomialEdge],
    Field(discriminator='family'),
]

DISCRETE_STATE_FAMILIES = ('finite', 'finite_joint', 'ctmc')
LITERAL_FIELDS = ('family', 'drift', 'mean', 'rate', 'weight_method')


def _references(value) -> List[str]:
    if isinstance(value, str):
        return [value[1:] if value.startswith('-') else value]
    if isinstance(value, (list, tuple)):
        return [name for item in value for name in _references(item)]
    return []


class ModelFile(BaseModel):
    model_config = ConfigDict(extra='forbid')

    schema_version: Literal[1] = 1
    name: str = 'model'
    vertices: int = Field(ge=2)
    root: int = 0
    root_value: Union[Scalar, List[Any]]
    parameters: Dict[str, ParameterSpec] = {}
    edges: List[EdgeSpec]
    observations: Dict[int, Any]

    @model_validator(mode='after')
    def check_references(self) -> 'ModelFile':
        known = set(self.parameters)
        for i, edge in enumerate(self.edges):
            for field_name, value in edge:
                if field_name in LITERAL_FIELDS:
                    continue
                unknown = sorted(set(_references(value)) - known)
                if unknown:
                    raise ValueError(f"edges[{i}].{field_name} refers to unknown parameters {unknown}")
        unknown = sorted(set(_references(self.root_value)) - known)
        if unknown:
            raise ValueError(f"root_value refers to unknown parameters {unknown}")
        return self

    def template(self) -> ModelTemplate:
        return template_from_file(self)


# ============================================
# LOAD / WRITE
# ============================================

def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = '.'.join(str(p) for p in item['loc'])
        parts.append(f"{location}: {item['msg']}" if location else item['msg'])
    return '; '.join(parts)


def parse_model_file(data: Dict[str, Any]) -> ModelFile:
    try:
        return ModelFile.model_validate(data)
    except ValidationError as e:
        raise ModelValidationError(f"invalid model file: {_format_validation_error(e)}") from None


def load_model_file(path) -> ModelFile:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ModelValidationError(f"model file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ModelValidationError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    logger.debug(f"loaded model file {path}")
    return parse_model_file(data)


def write_model_file(model_file: ModelFile, path) -> None:
    Path(path).write_text(model_file.model_dump_json(indent=2, exclude_none=True) + '\n')


# ============================================
# BUILDING MODELS
# ============================================

def resolve(value, env: Dict[str, float]):
    """Replace parameter names by their values; lists become float arrays."""
    if value is None:
        return None
    if isinstance(value, str):
        sign, name = (-1.0, value[1:]) if value.startswith('-') else (1.0, value)
        if name not in env:
            raise ModelValidationError(f"unknown parameter '{name}'")
        return sign * env[name]
    if isinstance(value, (list, tuple)):
        return np.asarray([resolve(v, env) for v in value], dtype=float)
    return float(value)


def _tanh_mean(A: np.ndarray, beta: np.ndarray):
    return lambda x: np.tanh(A @ x) + beta


def build_kernel(edge: EdgeSpec, env: Dict[str, float], basis_size: Optional[int] = None):
    r = lambda v: resolve(v, env)
    if edge.family == 'finite':
        K_aux = r(edge.K_aux)
        if K_aux is not None and edge.sparse_aux:
            K_aux = sparse.csr_matrix(K_aux)
        return FiniteKernel(r(edge.K), K_aux)
    if edge.family == 'finite_joint':
        return JointFiniteKernel(r(edge.K), r(edge.K_aux), r(edge.prior))
    if edge.family == 'gaussian':
        Phi, beta = r(edge.Phi), r(edge.beta)
        mean = _tanh_mean(r(edge.A) if edge.A is not None else Phi, beta) if edge.mean == 'tanh' else None
        cov_matrix = r(edge.cov)
        cov = (lambda x, _c=cov_matrix: _c) if cov_matrix is not None else None
        return GaussKernel(Phi, beta, r(edge.Q), mean=mean, cov=cov)
    if edge.family == 'gaussian_joint':
        return JointGaussKernel(edge.parent_dims, r(edge.Phi), r(edge.beta), r(edge.Q),
                                prior=(r(edge.prior_mean), r(edge.prior_cov)))
    if edge.family == 'sde':
        B, beta, sigma = r(edge.B), r(edge.beta), r(edge.sigma)
        if edge.drift == 'tanh_coupled':
            sde = SDESpec(drift=lambda u, x, _B=B, _b=beta: np.tanh(_B @ x) + _b,
                          dispersion=lambda u, x, _s=sigma: _s)
        else:
            sde = SDESpec.linear(B, beta, sigma)
        aux = LinearAuxSpec(
            B if edge.aux_B is None else r(edge.aux_B),
            beta if edge.aux_beta is None else r(edge.aux_beta),
            sigma if edge.aux_sigma is None else r(edge.aux_sigma),
        )
        return SDEKernel(sde, aux, r(edge.tau), n_steps=edge.n_steps)
    if edge.family == 'ctmc':
        return CTMCKernel(r(edge.Q), r(edge.tau), Q_aux=r(edge.Q_aux), blocks=edge.blocks)
    if edge.family == 'gamma':
        rate_aux, amplitude = r(edge.rate_aux), r(edge.amplitude)
        rate = (lambda x, _b=rate_aux, _a=amplitude: _b * (1.0 + _a * np.sin(x))) if edge.rate == 'sine' else None
        return GammaKernel(r(edge.alpha), rate_aux, rate=rate, weight_method=edge.weight_method)
    if edge.family == 'sis':
        return SISKernel(r(edge.lam), r(edge.gam), edge.neighbors, r(edge.lam_aux), r(edge.gam_aux))
    if edge.family == 'sis_report':
        return SISReport(edge.N, r(edge.rho))
    if edge.family == 'wright_fisher':
        return WFKernel(WFSpec(r(edge.beta1), r(edge.beta2)), r(edge.tau), n_steps=edge.n_steps)
    if edge.family == 'binomial':
        return BinomialEmission(edge.n, edge.K or basis_size or default_basis_size([edge.n]))
    raise ModelValidationError(f"unknown edge family '{edge.family}'")


def _state_value(value, family: str, env: Dict[str, float]):
    resolved = resolve(value, env)
    if family in DISCRETE_STATE_FAMILIES or family in ('sis_report', 'binomial'):
        return int(round(float(resolved)))
    if family == 'sis':
        return np.asarray(resolved, dtype=int)
    if family in ('gamma', 'wright_fisher'):
        return float(resolved)
    return np.atleast_1d(resolved)


def build_model(model_file: ModelFile, env: Dict[str, float]) -> DirectedGraphModel:
    binomials = [e.n for e in model_file.edges if e.family == 'binomial' and e.K is None]
    basis_size = default_basis_size(binomials) if binomials else None
    edges = [Edge(parents=e.parents, target=e.target, kernel=build_kernel(e, env, basis_size))
             for e in model_file.edges]
    by_target = {e.target: e for e in model_file.edges}
    observations = {}
    for v, value in model_file.observations.items():
        if v not in by_target:
            raise ModelValidationError(f"observation on vertex {v}, which has no incoming edge")
        observations[v] = _state_value(value, by_target[v].family, env)
    root_families = [e.family for e in model_file.edges
                     if model_file.root in ([e.parents] if isinstance(e.parents, int) else e.parents)]
    if not root_families:
        raise ModelValidationError(f"root {model_file.root} has no outgoing edge")
    root_value = _state_value(model_file.root_value, root_families[0], env)
    return DirectedGraphModel(model_file.vertices, model_file.root, root_value, edges, observations,
                              name=model_file.name)


def template_from_file(model_file: ModelFile) -> ModelTemplate:
    fixed = {k: p.value for k, p in model_file.parameters.items() if not p.free}
    free = [k for k, p in model_file.parameters.items() if p.free]

    def builder(theta: Dict[str, float]) -> DirectedGraphModel:
        return build_model(model_file, {**fixed, **theta})

    template = ModelTemplate(
        builder=builder,
        parameter_names=free,
        start=[model_file.parameters[k].value for k in free],
        priors={k: Prior(model_file.parameters[k].prior.kind, tuple(model_file.parameters[k].prior.params))
                for k in free},
        name=model_file.name,
        steps=[model_file.parameters[k].step for k in free],
    )
    return template


def with_parameters(model_file: ModelFile, values: Dict[str, float], free: Optional[Sequence[str]] = None) -> ModelFile:
    """Copy of ``model_file`` with new parameter values (and optionally a new free set)."""
    params = {}
    for k, p in model_file.parameters.items():
        params[k] = p.model_copy(update={'value': values.get(k, p.value),
                                         'free': p.free if free is None else k in free})
    return model_file.model_copy(update={'parameters': params})
