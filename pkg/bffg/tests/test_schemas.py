# tests/test_schemas.py
import json

import numpy as np
import pytest

from bffg.continuous.wright_fisher import WFKernel
from bffg.errors import ModelValidationError
from bffg.graph.template import ModelTemplate, parse_theta
from bffg.schemas.generator import TANH_PARAMETERS, finite_tree_model, tanh_tree_model, tree_shape
from bffg.schemas.model_file import (
    load_model_file, parse_model_file, resolve, with_parameters, write_model_file,
)


def finite_chain(**overrides):
    data = {
        'name': 'chain',
        'vertices': 3,
        'root_value': 0,
        'parameters': {'p': {'value': 0.3}},
        'edges': [
            {'family': 'finite', 'parents': 0, 'target': 1, 'K': [['-p', 1.0], [0.5, 0.5]]},
            {'family': 'finite', 'parents': 1, 'target': 2, 'K': [[0.9, 0.1], [0.2, 0.8]]},
        ],
        'observations': {'2': 1},
    }
    data.update(overrides)
    return data


def test_generated_tanh_model_round_trips(tmp_path):
    model_file = tanh_tree_model(levels=2, branching=3, seed=5)
    path = tmp_path / 'tanh.json'
    write_model_file(model_file, path)
    assert load_model_file(path) == model_file


def test_generated_finite_model_round_trips(tmp_path):
    model_file = finite_tree_model(n_vertices=7, n_states=4, seed=2, perturb=0.3)
    path = tmp_path / 'finite.json'
    write_model_file(model_file, path)
    assert load_model_file(path) == model_file


def test_unknown_parameter_reference_is_reported_with_its_field():
    data = finite_chain()
    data['edges'][1]['K'] = [['q', 0.1], [0.2, 0.8]]
    with pytest.raises(ModelValidationError, match=r'edges\[1\]\.K refers to unknown parameters'):
        parse_model_file(data)


def test_unknown_fields_are_rejected():
    data = finite_chain()
    data['edges'][0]['bogus'] = 1
    with pytest.raises(ModelValidationError, match='invalid model file'):
        parse_model_file(data)


def test_unknown_edge_family_is_rejected():
    data = finite_chain()
    data['edges'][0]['family'] = 'poisson'
    with pytest.raises(ModelValidationError, match='invalid model file'):
        parse_model_file(data)


def test_malformed_json_reports_the_line(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{\n  "vertices": 3,\n  oops\n}\n')
    with pytest.raises(ModelValidationError, match='line 3'):
        load_model_file(path)


def test_missing_file_is_a_validation_error(tmp_path):
    with pytest.raises(ModelValidationError, match='not found'):
        load_model_file(tmp_path / 'absent.json')


def test_resolve_substitutes_and_negates_names():
    env = {'theta0': 2.0, 'sigma': 0.5}
    assert resolve('-theta0', env) == -2.0
    assert resolve(3, env) == 3.0
    assert np.array_equal(resolve([['sigma', 1], [0, '-sigma']], env), [[0.5, 1.0], [0.0, -0.5]])
    with pytest.raises(ModelValidationError, match="unknown parameter 'tau'"):
        resolve('tau', env)


def test_negated_parameter_reaches_the_kernel():
    data = finite_chain()
    data['parameters'] = {'p': {'value': 0.8}, 'q': {'value': -0.2}}
    data['edges'][0]['K'] = [['p', '-q'], [0.5, 0.5]]
    kernel = parse_model_file(data).template().bind().in_edge(1).kernel
    assert np.allclose(kernel.K, [[0.8, 0.2], [0.5, 0.5]])


def test_negative_kernel_entries_are_refused_when_bound():
    with pytest.raises(ModelValidationError):
        parse_model_file(finite_chain()).template().bind([0.3])


def test_template_carries_priors_and_steps():
    template = tanh_tree_model(levels=2, branching=2, seed=1).template()
    assert template.parameter_names == TANH_PARAMETERS
    assert np.allclose(template.theta0, [0.0, 0.65, 0.1, 0.4])
    assert template.steps == [0.1, 0.1, 0.05, 0.05]
    assert template.log_prior(template.theta0) == pytest.approx(2 * np.log(0.1))
    bad = template.theta0.copy()
    bad[template.index('sigma1')] = -0.2
    assert template.log_prior(bad) == -np.inf


def test_fixed_parameters_are_substituted():
    model_file = tanh_tree_model(levels=2, branching=1, seed=1, leaf_variance=0.02)
    model = model_file.template().bind()
    leaf = max(model.observations)
    assert np.allclose(model.in_edge(leaf).kernel.Q, 0.02 * np.eye(2))


def test_with_parameters_changes_values_and_free_set():
    model_file = tanh_tree_model(levels=2, branching=1, seed=1)
    updated = with_parameters(model_file, {'theta1': 0.3}, free=['theta1', 'eps'])
    template = updated.template()
    assert template.parameter_names == ('theta1', 'eps')
    assert template.theta0[0] == 0.3
    assert model_file.parameters['theta1'].value == 0.65


def test_tanh_generator_observes_every_tree_leaf():
    model_file = tanh_tree_model(levels=3, branching=2, seed=0)
    assert model_file.vertices == 7 + 4
    assert sorted(model_file.observations) == [7, 8, 9, 10]
    assert all(len(v) == 2 for v in model_file.observations.values())
    model = model_file.template().bind()
    assert sorted(model.leaves) == [7, 8, 9, 10]


def test_finite_generator_observes_its_leaves():
    model_file = finite_tree_model(n_vertices=8, n_states=3, seed=4)
    model = model_file.template().bind()
    assert set(model.observations) == set(model.leaves)
    assert all(0 <= x < 3 for x in model.observations.values())


def test_finite_generator_validates_its_arguments():
    with pytest.raises(ModelValidationError, match='perturb'):
        finite_tree_model(perturb=1.5)


def test_tree_shape_is_breadth_first():
    assert tree_shape(3, 2) == [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)]
    with pytest.raises(ModelValidationError):
        tree_shape(1, 2)


def test_template_from_file(tmp_path):
    path = tmp_path / 'chain.json'
    path.write_text(json.dumps(finite_chain(edges=[
        {'family': 'finite', 'parents': 0, 'target': 1, 'K': [['p', 0.7], [0.5, 0.5]]},
        {'family': 'finite', 'parents': 1, 'target': 2, 'K': [[0.9, 0.1], [0.2, 0.8]]},
    ])))
    template = ModelTemplate.from_file(path)
    assert template.parameter_names == ('p',)
    model = template.bind([0.3])
    assert np.allclose(model.in_edge(1).kernel.K[0], [0.3, 0.7])


def test_parse_theta_accepts_positional_and_named_values():
    template = tanh_tree_model(levels=2, branching=1, seed=1).template()
    assert np.allclose(parse_theta('1,2,3,4', template), [1, 2, 3, 4])
    assert np.allclose(parse_theta('sigma1=0.9', template), [0.0, 0.65, 0.1, 0.9])
    assert np.allclose(parse_theta(None, template), template.theta0)
    with pytest.raises(ModelValidationError):
        parse_theta('1,2', template)
    with pytest.raises(ModelValidationError):
        parse_theta('kappa=1', template)


def test_binomial_basis_size_defaults_from_the_sample_sizes():
    data = {
        'name': 'wf',
        'vertices': 4,
        'root_value': 0.4,
        'parameters': {'b1': {'value': 0.5}},
        'edges': [
            {'family': 'wright_fisher', 'parents': 0, 'target': 1, 'tau': 0.6, 'beta1': 'b1', 'beta2': 0.3},
            {'family': 'binomial', 'parents': 1, 'target': 2, 'n': 3},
            {'family': 'binomial', 'parents': 1, 'target': 3, 'n': 2},
        ],
        'observations': {'2': 1, '3': 2},
    }
    model = parse_model_file(data).template().bind()
    assert isinstance(model.in_edge(1).kernel, WFKernel)
    assert model.in_edge(2).kernel.K == model.in_edge(3).kernel.K
    assert model.in_edge(2).kernel.K >= 5
    assert model.root_value == 0.4
    assert model.observations == {2: 1, 3: 2}
