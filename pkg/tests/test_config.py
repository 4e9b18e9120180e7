import pytest
from hypothesis import given
from hypothesis import strategies as st

from reverb_forge.config import (
    SEED_ENV,
    ConfigError,
    RunConfig,
    dumps,
    loads,
    resolve_config,
    save,
)


def test_defaults_mirror_constants():
    c = RunConfig().validate()
    assert c.t_0 == 0.0025
    assert c.t60_range == (0.02, 2.0) and c.drr_range == (-10.0, 30.0)
    assert c.p_apply == 0.99 and c.scale_range == (0.4, 1.0)
    assert c.fit_range == (-5.0, -25.0) and c.grid_bins == (8, 8)


def test_round_trip_defaults():
    assert resolve_config({}, None, env={}) == RunConfig()
    assert RunConfig(**loads(dumps(RunConfig()))) == RunConfig()


@given(
    st.integers(0, 2**64 - 1),
    st.floats(1e-5, 0.1),
    st.floats(0.001, 0.99),
    st.floats(1.0, 10.0),
    st.floats(0.0, 1.0),
    st.tuples(st.integers(1, 50), st.integers(1, 50)),
)
def test_round_trip_lossless(seed, t0, t60_lo, t60_hi, p, bins):
    c = RunConfig(seed=seed, t_0=t0, t60_range=(t60_lo, t60_hi), p_apply=p, grid_bins=bins).validate()
    assert RunConfig(**loads(dumps(c))) == c


def test_three_layer_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# file layer\nseed = 11\np_apply = 0.5\nt_0 = 0.003\n")
    env = {SEED_ENV: "7"}
    assert resolve_config({}, None, env).seed == 7
    c = resolve_config({}, cfg, env)
    assert (c.seed, c.p_apply, c.t_0) == (11, 0.5, 0.003)
    c = resolve_config({"seed": 12, "t_0": None}, cfg, env)
    assert (c.seed, c.p_apply, c.t_0) == (12, 0.5, 0.003)
    assert c.scale_range == (0.4, 1.0)


def test_save_and_load(tmp_path):
    c = RunConfig(seed=5, drr_range=(-5.0, 20.0))
    save(c, tmp_path / "c.cfg")
    assert resolve_config(None, tmp_path / "c.cfg", env={}) == c


@pytest.mark.parametrize("text", [
    "seed = -1", "seed = 1.5", "t_0 = 0", "p_apply = 1.5", "t60_range = 2, 1", "t60_range = 1",
    "scale_range = 0, 1", "fit_range = -25, -5", "grid_bins = 0, 8", "bogus = 1", "seed 3",
    "seed = 1\nseed = 2", "t_0 = nan", "drr_range = a, b",
])
def test_invalid_config(text):
    with pytest.raises(ConfigError):
        RunConfig(**loads(text)).validate()


def test_invalid_env_seed():
    with pytest.raises(ConfigError):
        resolve_config({}, None, {SEED_ENV: "abc"})


def test_unknown_flag_key():
    with pytest.raises(ConfigError):
        resolve_config({"nope": 1}, None, {})
