"""Directed tree/DAG models traversed by the backward and forward passes.

A model owns dense integer vertex ids ``0..n-1``. Each non-root vertex has
exactly one incoming :class:`Edge`; an edge with several parents is a DAG
collider. Leaves carry observations and always hang off discrete (emission)
edges.
"""
import logging
import numbers
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx

from bffg.errors import FamilyMismatchError, StructuralError

logger = logging.getLogger(__name__)

VertexId = int


@dataclass(frozen=True)
class Observation:
    leaf: VertexId
    value: Any
    emission: Any


@dataclass(frozen=True, eq=False)
class Edge:
    """Edge ``pa(s) -> s`` carrying a kernel (discrete) or a process (continuous)."""
    parents: Tuple[VertexId, ...]
    target: VertexId
    kernel: Any

    def __post_init__(self):
        parents = self.parents
        if isinstance(parents, numbers.Integral):
            parents = (parents,)
        object.__setattr__(self, 'parents', tuple(int(p) for p in parents))
        object.__setattr__(self, 'target', int(self.target))
        if not self.parents:
            raise StructuralError(f"edge into {self.target} has no parent")

    @property
    def source(self):
        return self.parents[0] if len(self.parents) == 1 else self.parents

    @property
    def multi_parent(self) -> bool:
        return len(self.parents) > 1

    @property
    def continuous(self) -> bool:
        return bool(getattr(self.kernel, 'continuous', False))

    @property
    def tau(self) -> Optional[float]:
        return getattr(self.kernel, 'tau', None) if self.continuous else None

    def __repr__(self) -> str:
        kind = f"continuous tau={self.tau:g}" if self.continuous else "discrete"
        return f"Edge({self.source}->{self.target}, {getattr(self.kernel, 'family', '?')}, {kind})"


class DirectedGraphModel:
    """Immutable directed tree or DAG with kernels on the edges and data at the leaves."""

    def __init__(
        self,
        n_vertices: int,
        root: VertexId,
        root_value: Any,
        edges: Sequence[Edge],
        observations: Mapping[VertexId, Any],
        name: str = 'model',
    ):
        self.n_vertices = int(n_vertices)
        self.root = int(root)
        self.root_value = root_value
        self.edges: Tuple[Edge, ...] = tuple(edges)
        self.name = name
        self._observed: Dict[VertexId, Any] = {int(k): v for k, v in observations.items()}
        self._in_edge: Dict[VertexId, Edge] = {}
        self._child_edges: Dict[VertexId, List[Edge]] = {v: [] for v in range(self.n_vertices)}
        self._validate()

    # ============================================
    # CONSTRUCTION
    # ============================================

    def _validate(self):
        if self.n_vertices < 2:
            raise StructuralError("a model needs a root and at least one more vertex")
        self._check_vertex(self.root)

        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n_vertices))
        for edge in self.edges:
            self._check_vertex(edge.target)
            for p in edge.parents:
                self._check_vertex(p)
                if p == edge.target:
                    raise StructuralError(f"self-loop at vertex {p}")
            if edge.target == self.root:
                raise StructuralError(f"root {self.root} cannot have an incoming edge")
            if edge.target in self._in_edge:
                raise StructuralError(f"vertex {edge.target} has more than one incoming edge")
            if len(set(edge.parents)) != len(edge.parents):
                raise StructuralError(f"edge into {edge.target} repeats a parent")
            self._in_edge[edge.target] = edge
            for p in edge.parents:
                self._child_edges[p].append(edge)
                graph.add_edge(p, edge.target)

        missing = [v for v in range(self.n_vertices) if v != self.root and v not in self._in_edge]
        if missing:
            raise StructuralError(f"vertices without a parent: {missing}")
        if not nx.is_directed_acyclic_graph(graph):
            cycle = nx.find_cycle(graph)
            raise StructuralError(f"cycle detected: {cycle}")
        if not self._child_edges[self.root]:
            raise StructuralError("root has no children")
        self._graph = graph

        for v in self.leaves:
            if v not in self._observed:
                raise StructuralError(f"leaf {v} carries no observation")
            edge = self._in_edge[v]
            if edge.continuous:
                raise StructuralError(f"leaf edge into {v} is continuous; leaf edges must be emission densities")
            if edge.multi_parent:
                raise StructuralError(f"leaf edge into {v} has several parents")
        extra = sorted(set(self._observed) - set(self.leaves))
        if extra:
            raise StructuralError(f"observations attached to non-leaf vertices: {extra}")

        for v in range(self.n_vertices):
            self._check_fusion_currency(v)

    def _check_vertex(self, v):
        if not isinstance(v, numbers.Integral) or not 0 <= v < self.n_vertices:
            raise StructuralError(f"unknown vertex {v}")

    def _check_fusion_currency(self, v: VertexId):
        """Children of ``v`` must send messages of one family, the family the in-edge of ``v`` pulls back."""
        kinds = {getattr(e.kernel, 'message_type', None) for e in self._child_edges[v]}
        kinds.discard(None)
        if len(kinds) > 1:
            names = sorted(k.__name__ for k in kinds)
            raise FamilyMismatchError(f"vertex {v} fuses messages of different families: {names}")
        if kinds and len(self._child_edges[v]) > 1:
            (kind,) = kinds
            if not getattr(kind, 'fusable', True):
                raise FamilyMismatchError(f"vertex {v} branches but {kind.__name__} potentials cannot be fused")
        if v == self.root or not kinds:
            return
        (kind,) = kinds
        accepts = getattr(self._in_edge[v].kernel, 'target_type', None)
        if accepts is not None and not issubclass(kind, accepts):
            raise FamilyMismatchError(
                f"edge into {v} pulls back {accepts.__name__} but its children send {kind.__name__}"
            )

    # ============================================
    # QUERIES
    # ============================================

    @property
    def vertices(self) -> range:
        return range(self.n_vertices)

    @cached_property
    def is_tree(self) -> bool:
        return all(not e.multi_parent for e in self.edges)

    @cached_property
    def leaves(self) -> Tuple[VertexId, ...]:
        return tuple(v for v in self.vertices if v != self.root and not self._child_edges[v])

    @cached_property
    def internal(self) -> Tuple[VertexId, ...]:
        return tuple(v for v in self.vertices if v != self.root and self._child_edges[v])

    def in_edge(self, v: VertexId) -> Edge:
        self._check_vertex(v)
        if v == self.root:
            raise StructuralError("the root has no incoming edge")
        return self._in_edge[v]

    def child_edges(self, v: VertexId) -> Tuple[Edge, ...]:
        self._check_vertex(v)
        return tuple(sorted(self._child_edges[v], key=lambda e: e.target))

    def children(self, v: VertexId) -> frozenset:
        self._check_vertex(v)
        return frozenset(e.target for e in self._child_edges[v])

    def parents(self, v: VertexId) -> frozenset:
        self._check_vertex(v)
        if v == self.root:
            return frozenset()
        return frozenset(self._in_edge[v].parents)

    def leaves_of(self, v: VertexId) -> frozenset:
        self._check_vertex(v)
        if v in self._observed:
            return frozenset({v})
        return frozenset(d for d in nx.descendants(self._graph, v) if d in self._observed)

    def observation(self, v: VertexId) -> Observation:
        self._check_vertex(v)
        if v not in self._observed:
            raise StructuralError(f"vertex {v} is not an observed leaf")
        return Observation(leaf=v, value=self._observed[v], emission=self._in_edge[v].kernel)

    @property
    def observations(self) -> Dict[VertexId, Any]:
        return dict(self._observed)

    def is_leaf(self, v: VertexId) -> bool:
        return v in self._observed

    @cached_property
    def _backward_order(self) -> Tuple[VertexId, ...]:
        order: List[VertexId] = []
        for generation in nx.topological_generations(self._graph.reverse(copy=False)):
            order.extend(sorted(v for v in generation if v != self.root))
        return tuple(order)

    def backward_order(self) -> List[VertexId]:
        return list(self._backward_order)

    def forward_order(self) -> List[VertexId]:
        return list(reversed(self._backward_order))

    def __repr__(self) -> str:
        shape = 'tree' if self.is_tree else 'DAG'
        return f"DirectedGraphModel({self.name!r}, {shape}, n={self.n_vertices}, leaves={list(self.leaves)})"


def backward_order(model: DirectedGraphModel) -> List[VertexId]:
    """Children before parents, generation by generation, ties by ascending id."""
    return model.backward_order()


def forward_order(model: DirectedGraphModel) -> List[VertexId]:
    return model.forward_order()
