"""Backward filtering and forward guiding over a whole model.

``run_backward`` visits vertices children-first, fuses the messages arriving
at each vertex and pulls the result back along the vertex's incoming edge.
``run_forward`` visits vertices parents-first, draws each state from the
guided kernel of its incoming edge and records one log-weight per edge.
"""
import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from bffg.engine.dag import default_parent_priors
from bffg.errors import BFFGError, NumericalError
from bffg.graph.model import DirectedGraphModel
from bffg.potentials.base import EdgeFilter, Potential, edge_log_weight, fuse, init_leaf

logger = logging.getLogger(__name__)


@dataclass
class BackwardPass:
    model: DirectedGraphModel
    filters: Dict[int, EdgeFilter]
    vertex_potentials: Dict[int, Potential]
    log_root_value: float
    parent_priors: Dict[int, Any] = field(default_factory=dict)

    def message(self, v: int, parent: Optional[int] = None) -> Potential:
        """Message sent by the edge into ``v`` to ``parent`` (the only parent on tree edges)."""
        msg = self.filters[v].message
        if isinstance(msg, tuple):
            edge = self.model.in_edge(v)
            return msg[edge.parents.index(parent if parent is not None else edge.parents[0])]
        return msg

    @property
    def root_potential(self) -> Potential:
        return self.vertex_potentials[self.model.root]


@dataclass
class WeightLedger:
    """Per-edge log-weights keyed by the target vertex of the edge."""
    log_root_value: float
    entries: Dict[int, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.log_root_value + math.fsum(self.entries.values()))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class GuidedTrajectory:
    states: Dict[int, Any]
    paths: Dict[int, Any] = field(default_factory=dict)
    innovations: Dict[int, Any] = field(default_factory=dict)


def resolve_model(model, theta=None) -> DirectedGraphModel:
    """Concrete model: templates are bound to ``theta`` (or their starting values)."""
    if isinstance(model, DirectedGraphModel):
        return model
    return model.bind(model.theta0 if theta is None else theta)


def _collect(incoming: Dict[int, List[Potential]], edge, message) -> None:
    parts = message if isinstance(message, tuple) else (message,)
    for parent, part in zip(edge.parents, parts):
        incoming[parent].append(part)


def run_backward(model, theta=None) -> BackwardPass:
    model = resolve_model(model, theta)
    priors = default_parent_priors(model)
    incoming: Dict[int, List[Potential]] = {v: [] for v in model.vertices}
    filters: Dict[int, EdgeFilter] = {}
    fused: Dict[int, Potential] = {}

    for v in model.backward_order():
        edge = model.in_edge(v)
        try:
            if model.is_leaf(v):
                filt = EdgeFilter(message=init_leaf(model.observation(v)))
            else:
                fused[v] = fuse(incoming[v])
                kernel = edge.kernel
                if v in priors:
                    kernel = copy.copy(kernel)
                    kernel.set_prior(priors[v])
                filt = kernel.backward(fused[v], edge=v)
        except BFFGError:
            logger.error(f"backward pass failed on {edge!r}")
            raise
        filters[v] = filt
        _collect(incoming, edge, filt.message)

    fused[model.root] = fuse(incoming[model.root])
    log_root = fused[model.root].log_value(model.root_value)
    if not np.isfinite(log_root):
        logger.warning(f"root potential is {log_root} at the root value; the likelihood estimate will be zero")
    logger.debug(f"backward pass over {len(filters)} edges, log g_r = {log_root:.6g}")
    return BackwardPass(model=model, filters=filters, vertex_potentials=fused,
                        log_root_value=float(log_root), parent_priors=priors)


def _run_seed(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2 ** 63))
    return int(rng)


def edge_rng(seed: int, v: int) -> np.random.Generator:
    """Random stream of the edge into ``v``, fixed by the run seed alone."""
    return np.random.default_rng([seed, v])


def run_forward(model, bp: BackwardPass, rng, innovations: Optional[Mapping[int, Any]] = None):
    """Guided draw of every non-root state; returns ``(GuidedTrajectory, WeightLedger)``.

    ``rng`` is a seed or a generator. With ``innovations`` the reparameterised
    edges reuse the given driving noise instead of drawing it.
    """
    model = model if isinstance(model, DirectedGraphModel) else bp.model
    seed = _run_seed(rng)
    innovations = innovations or {}
    states: Dict[int, Any] = {model.root: model.root_value}
    trajectory = GuidedTrajectory(states=states)
    ledger = WeightLedger(log_root_value=bp.log_root_value)

    for v in model.forward_order():
        edge = model.in_edge(v)
        filt = bp.filters[v]
        x = tuple(states[p] for p in edge.parents) if edge.multi_parent else states[edge.parents[0]]
        try:
            if model.is_leaf(v):
                obs = model.observation(v)
                states[v] = obs.value
                ledger.entries[v] = edge_log_weight(edge.kernel, obs, filt.message, x)
                continue
            draw = edge.kernel.guide(filt, x, edge_rng(seed, v), innovation=innovations.get(v), edge=v)
        except NumericalError as e:
            if e.edge is None:
                e.edge = v
            logger.error(f"forward pass failed on {edge!r}: {e}")
            raise
        states[v] = draw.state
        ledger.entries[v] = float(draw.log_weight)
        if draw.path is not None:
            trajectory.paths[v] = draw.path
        if draw.innovation is not None:
            trajectory.innovations[v] = draw.innovation
    return trajectory, ledger
