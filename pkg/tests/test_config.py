import pytest
from hypothesis import given, settings, strategies as st

from cble.branching import FiniteAtoms, Stable
from cble.config import (ExperimentConfig, emit_config, parse_config, parse_grid,
                         with_overrides)
from cble.errors import ConfigError
from cble.levy_env import LevyEnvSpec, TwoSidedExp

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_minimal_config_fills_defaults():
    cfg = parse_config("[run]\nz = 2\n")
    assert cfg.run.z == 2.0
    assert cfg.run.n_paths == ExperimentConfig().run.n_paths
    assert cfg.env_spec() == LevyEnvSpec(-0.5, 1.0)
    assert cfg.mechanism() == Stable(1.0, 0.5)
    assert "n_paths = 100000" in emit_config(cfg)


def test_empty_text_is_default():
    assert parse_config("") == ExperimentConfig()


def test_negative_sigma_names_key():
    with pytest.raises(ConfigError) as info:
        parse_config("[environment]\nsigma = -1\n")
    (line, key, reason), = info.value.errors
    assert (line, key) == (2, "environment.sigma") and "constraint" in reason


def test_duplicate_key_reports_both_lines():
    with pytest.raises(ConfigError) as info:
        parse_config("[run]\nz = 1\n# comment\nz = 2\n")
    (line, key, reason), = info.value.errors
    assert line == 4 and "line 2" in reason and "line 4" in reason


def test_errors_are_collected():
    text = "[run]\nbogus = 1\nn_paths = 1.5\nT = abc\n[nowhere]\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    reasons = [r for _, _, r in info.value.errors]
    assert len(reasons) == 4
    assert reasons[0] == "unknown key" and reasons[-1] == "unknown section"
    assert all("type mismatch" in r for r in reasons[1:3])


def test_cross_field_validation():
    with pytest.raises(ConfigError) as info:
        parse_config("[environment]\njump_rate = 1\njump_kind = twosided_exp\njump_params = 0.5, 2\n")
    assert info.value.errors[0][1] == "environment"


def test_jumps_and_atoms_built():
    cfg = parse_config("[environment]\njump_rate = 1.5\njump_kind = twosided_exp\n"
                       "jump_params = 0.4, 3, 2\n[branching]\nkind = atoms\nrho2 = 0.5\n"
                       "atoms = 1.0:2.0, 0.5:1.0\n")
    assert cfg.env_spec().jump_law == TwoSidedExp(0.4, 3.0, 2.0)
    assert cfg.mechanism() == FiniteAtoms(0.5, ((1.0, 2.0), (0.5, 1.0)))


def test_grid_syntax():
    assert parse_grid("10:40:10") == (10.0, 20.0, 30.0, 40.0)
    assert parse_grid("1, 2.5") == (1.0, 2.5)
    with pytest.raises(ValueError):
        parse_grid("1:0:1")


@settings(max_examples=100, deadline=None)
@given(finite, st.floats(0, 1e3), st.floats(0.05, 1.0), st.integers(1, 10 ** 9),
       st.lists(st.floats(1e-3, 1e4), min_size=1, max_size=6), st.text(
           st.characters(whitelist_categories=("Ll", "Nd")), max_size=10))
def test_round_trip(drift, sigma, beta, n, grid, prefix):
    cfg = ExperimentConfig()
    cfg = with_overrides(cfg, "environment", drift=drift, sigma=sigma)
    cfg = with_overrides(cfg, "branching", beta=beta)
    cfg = with_overrides(cfg, "run", n_paths=n, t_grid=tuple(grid))
    cfg = with_overrides(cfg, "output", prefix=prefix)
    assert parse_config(emit_config(cfg)) == cfg
