# tests/test_graph.py
import numpy as np
import pytest

from bffg.errors import FamilyMismatchError, StructuralError
from bffg.graph.model import DirectedGraphModel, Edge
from bffg.potentials.finite import FiniteKernel
from bffg.potentials.gamma import GammaKernel
from bffg.potentials.gaussian import GaussKernel

K = np.array([[0.9, 0.1], [0.2, 0.8]])


def fk():
    return FiniteKernel(K)


def branching_tree():
    """r=0 -> 1 -> {2, 3}, 3 -> {4, 5}; leaves 2, 4, 5."""
    edges = [Edge(0, 1, fk()), Edge(1, 2, fk()), Edge(1, 3, fk()), Edge(3, 4, fk()), Edge(3, 5, fk())]
    return DirectedGraphModel(6, 0, 0, edges, {2: 1, 4: 0, 5: 1})


def test_orders_visit_children_before_parents():
    model = branching_tree()
    order = model.backward_order()
    assert sorted(order) == [1, 2, 3, 4, 5]
    for v in order:
        for p in model.parents(v):
            if p != model.root:
                assert order.index(v) < order.index(p)
    assert model.forward_order() == list(reversed(order))


def test_queries():
    model = branching_tree()
    assert model.leaves == (2, 4, 5)
    assert model.internal == (1, 3)
    assert model.children(1) == frozenset({2, 3})
    assert model.parents(3) == frozenset({1})
    assert model.leaves_of(3) == frozenset({4, 5})
    assert model.observation(4).value == 0
    assert model.is_tree


def test_cycle_is_rejected():
    edges = [Edge(0, 3, fk()), Edge(2, 1, fk()), Edge(1, 2, fk())]
    with pytest.raises(StructuralError, match='cycle'):
        DirectedGraphModel(4, 0, 0, edges, {3: 0})


def test_missing_observation_is_rejected():
    edges = [Edge(0, 1, fk()), Edge(1, 2, fk())]
    with pytest.raises(StructuralError, match='observation'):
        DirectedGraphModel(3, 0, 0, edges, {})


def test_unknown_vertex_is_rejected():
    with pytest.raises(StructuralError, match='unknown vertex'):
        DirectedGraphModel(2, 0, 0, [Edge(0, 5, fk())], {5: 0})


def test_two_incoming_edges_are_rejected():
    edges = [Edge(0, 1, fk()), Edge(0, 2, fk()), Edge(1, 2, fk())]
    with pytest.raises(StructuralError, match='more than one incoming'):
        DirectedGraphModel(3, 0, 0, edges, {2: 0})


def test_mixed_message_families_are_rejected():
    """Children of one vertex must send messages of one family."""
    g = GaussKernel(np.eye(1), np.zeros(1), np.eye(1))
    edges = [Edge(0, 1, fk()), Edge(0, 2, g)]
    with pytest.raises(FamilyMismatchError):
        DirectedGraphModel(3, 0, 0, edges, {1: 0, 2: [0.0]})


def test_branching_gamma_vertex_is_rejected():
    """Gamma potentials cannot be fused, so a Gamma vertex may not branch."""
    edges = [Edge(0, 1, GammaKernel(1.0, 1.0)), Edge(1, 2, GammaKernel(1.0, 1.0)), Edge(1, 3, GammaKernel(1.0, 1.0))]
    with pytest.raises(FamilyMismatchError):
        DirectedGraphModel(4, 0, 0.0, edges, {2: 1.0, 3: 2.0})


def test_collider_edge_makes_a_dag():
    from bffg.engine.dag import JointFiniteKernel
    joint = np.full((2, 2, 2), 0.5)
    edges = [Edge(0, 1, fk()), Edge(0, 2, fk()), Edge((1, 2), 3, JointFiniteKernel(joint)), Edge(3, 4, fk())]
    model = DirectedGraphModel(5, 0, 0, edges, {4: 1})
    assert not model.is_tree
    assert model.in_edge(3).multi_parent
    assert model.parents(3) == frozenset({1, 2})
