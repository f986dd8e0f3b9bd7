"""Flat config format, experiment validation and presets."""

import numpy as np
import pytest

from softsensor import config
from softsensor.errors import ConfigError


def test_parse_flat_values_and_comments():
    text = """
    # experiment
    model = harmonic
    data.dt = 0.01      # seconds
    data.x0 = [2, -1, 3]
    observer.projection = True
    test.noise_seed = none
    """
    vals = config.parse_flat(text)
    assert vals == {"model": "harmonic", "data.dt": 0.01, "data.x0": [2, -1, 3],
                    "observer.projection": True, "test.noise_seed": None}


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="cfg:2"):
        config.parse_flat("model = harmonic\nnot a pair\n", "cfg")
    with pytest.raises(ConfigError, match="duplicate"):
        config.parse_flat("a = 1\na = 2\n")


def test_format_round_trip():
    vals = {"model": "rossler", "data.dt": 0.001, "data.x0": [[1.0, 1.0, 1.0]], "observer.projection": False}
    assert config.parse_flat(config.format_flat(vals)) == vals


@pytest.mark.parametrize("name", config.PRESET_NAMES)
def test_presets_build_and_round_trip(name):
    cfg = config.preset(name)
    model = cfg.build_model()
    x0s, xh0s = cfg.training_pairs()
    assert len(x0s) == len(xh0s) >= 1
    assert all(len(v) == model.n for v in x0s)
    again = config.ExperimentConfig.from_flat(cfg.to_flat())
    assert again == cfg


def test_missing_and_unknown_keys():
    with pytest.raises(ConfigError, match="data.dt"):
        config.ExperimentConfig.from_flat({"model": "harmonic", "data.horizon": 1.0})
    with pytest.raises(ConfigError, match="unknown key"):
        config.ExperimentConfig.from_flat({"model": "harmonic", "data.dt": 0.01, "data.horizon": 1.0,
                                           "data.x0": [0, 0, 1], "data.xhat0": [0, 0, 1], "data.tau": 1})
    with pytest.raises(ConfigError, match="data.x0"):
        config.ExperimentConfig.from_flat({"model": "harmonic", "data.dt": 0.01, "data.horizon": 1.0})


def test_value_validation():
    base = config.preset_values("ex2")
    for key, bad in [("data.x0", [1, 2]), ("smc.k0", 0), ("train.epochs", 0), ("noise.target", "sensor"),
                     ("model", "lorenz"), ("train.residual", "x"), ("data.dt", "fast")]:
        vals = dict(base)
        vals[key] = bad
        with pytest.raises(ConfigError):
            config.ExperimentConfig.from_flat(vals)


def test_model_parameters_pass_through():
    vals = config.preset_values("ex6")
    vals["model.S_T"] = 2.0
    cfg = config.ExperimentConfig.from_flat(vals)
    assert cfg.build_model().params["S_T"] == 2.0


def test_sampled_pairs_and_test_defaults():
    cfg = config.preset("ex7")
    x0, xh = cfg.training_pairs()
    tx0, txh = cfg.test_pairs()
    assert len(x0) == len(tx0) == 25
    assert not np.allclose(x0, tx0)
    assert cfg.test_T == 40.0 and cfg.test_burn_in == 20.0
    ex3 = config.preset("ex3")
    assert ex3.test_pairs() == ex3.training_pairs()
    assert ex3.test_T == 10.0


def test_test_noise_uses_separate_seed():
    cfg = config.preset("ex1")
    assert cfg.noise().seed == 0
    assert cfg.test_noise().seed == 1000
    assert config.preset("ex2").noise().target == "none"


def test_square_wave_preset_drives_both_pumps():
    model = config.preset("ex6_square").build_model()
    np.testing.assert_array_equal(model.control(1.0), [0.2, 0.2])
    np.testing.assert_array_equal(model.control(3.0), [0.0, 0.0])


def test_with_overrides():
    cfg = config.preset("ex2").with_overrides(**{"train.epochs": 3})
    assert cfg.epochs == 3


def test_load_config_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(config.format_flat(config.preset_values("ex3")))
    assert config.ExperimentConfig.from_flat(config.load_config_file(path)) == config.preset("ex3")
