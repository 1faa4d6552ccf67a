# tests/test_config.py
import importlib

import pytest

import bffg.config as config


def test_default_sde_steps_respects_max_step(monkeypatch):
    """Grid step never exceeds SDE_MAX_STEP."""
    monkeypatch.setattr(config, 'SDE_MAX_STEP', 0.01)
    assert config.default_sde_steps(1.0) == 100
    assert config.default_sde_steps(1.005) == 101
    assert 1.7 / config.default_sde_steps(1.7) <= 0.01


def test_default_sde_steps_has_two_steps_minimum(monkeypatch):
    """Very short edges still get a two-step grid."""
    monkeypatch.setattr(config, 'SDE_MAX_STEP', 10.0)
    assert config.default_sde_steps(0.5) == 2


def test_default_sde_steps_rejects_non_positive_tau():
    with pytest.raises(ValueError):
        config.default_sde_steps(0.0)


def test_env_overrides_are_read_at_import(monkeypatch):
    """Numeric settings come from the environment."""
    monkeypatch.setenv('BFFG_CTMC_GRID', '128')
    monkeypatch.setenv('BFFG_WF_CLAMP', '1e-4')
    try:
        reloaded = importlib.reload(config)
        assert reloaded.CTMC_GRID == 128
        assert reloaded.WF_CLAMP == pytest.approx(1e-4)
    finally:
        monkeypatch.undo()
        importlib.reload(config)


def test_malformed_env_value_names_the_variable(monkeypatch):
    """A non-numeric value fails at import with the variable in the message."""
    monkeypatch.setenv('BFFG_GL_NODES', 'eight')
    try:
        with pytest.raises(ValueError, match='BFFG_GL_NODES'):
            importlib.reload(config)
    finally:
        monkeypatch.undo()
        importlib.reload(config)


def test_blank_env_value_uses_default(monkeypatch):
    monkeypatch.setenv('BFFG_ENUM_LIMIT', '  ')
    try:
        assert importlib.reload(config).ENUM_LIMIT == 1_000_000
    finally:
        monkeypatch.undo()
        importlib.reload(config)
