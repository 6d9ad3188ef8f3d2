import math

import pytest
import yaml

from handsoff.config import PRESETS, ConfigError, load_config, parse_config, preset
from handsoff.dynamics import LinearSystem, Pendulum, Uniform


def test_pendulum_preset_values():
    cfg = preset("pendulum_table1")
    t = cfg.train
    assert isinstance(cfg.build_model(), Pendulum)
    assert cfg.model == {"kind": "pendulum", "length": 1.0, "mass": 1.0, "friction": 1.0,
                         "gravity": 9.80665, "dt": 0.1}
    assert (t.horizon, t.batch_size, t.polish_rounds) == (50, 2, 10)
    assert (t.lam_incremental, t.lam_polish) == (1.0, 3e7)
    assert (t.alpha, t.lr0, t.lr_beta) == (0.667, 1.0, 0.5)
    assert t.p_polish == (2 / 3) ** 50
    assert t.x0 == (0.0, 0.0) and t.target == (math.pi, 0.0)
    assert t.noise == Uniform(-1.0, 1.0)
    assert cfg.eval.n_eval == 100 and cfg.eval.threshold == 1e-3


def test_integrator_preset():
    cfg = preset("integrator")
    assert isinstance(cfg.build_model(), LinearSystem)
    assert cfg.train.noise == Uniform(0.0, 0.0)


@pytest.mark.parametrize("name", PRESETS)
def test_echo_reparses_to_equal_config(name, tmp_path):
    cfg = preset(name)
    path = tmp_path / "echo.yaml"
    path.write_text(cfg.dump())
    assert load_config(path) == cfg


def test_load_by_preset_name():
    assert load_config("pendulum_table1") == preset("pendulum_table1")


def test_preset_override():
    cfg = parse_config({"schema": "handsoff.run/1", "preset": "pendulum_table1",
                        "train": {"horizon": 10, "noise": {"kind": "uniform", "low": 0.0, "high": 0.0}}})
    assert cfg.train.horizon == 10
    assert cfg.train.lam_polish == 3e7
    assert cfg.train.noise == Uniform(0.0, 0.0)


def _error(data) -> ConfigError:
    with pytest.raises(ConfigError) as err:
        parse_config(data)
    return err.value


def test_unknown_key_names_field():
    err = _error({"schema": "handsoff.run/1", "train": {"horizn": 5}})
    assert err.path == "train.horizn"
    assert "train.horizn" in str(err)


def test_wrong_schema():
    assert _error({"schema": "other/2"}).path == "schema"
    assert _error({"train": {}}).path == "schema"


def test_wrong_types():
    assert _error({"schema": "handsoff.run/1", "train": {"horizon": 2.5}}).path == "train.horizon"
    assert _error({"schema": "handsoff.run/1", "train": {"x0": 3}}).path == "train.x0"


def test_bad_model():
    assert _error({"schema": "handsoff.run/1", "model": {"kind": "cartpole"}}).path == "model.kind"
    assert _error({"schema": "handsoff.run/1", "model": {"kind": "pendulum", "mass": -1}}).path == "model"


def test_dimension_mismatch():
    err = _error({"schema": "handsoff.run/1", "train": {"x0": [0.0]}})
    assert err.path == "train.x0"


def test_unknown_preset():
    assert _error({"schema": "handsoff.run/1", "preset": "nope"}).path == "preset"


def test_malformed_yaml_reports_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("schema: handsoff.run/1\ntrain:\n  horizon: [1, 2\n  seed: 3\n")
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.line is not None
    assert "line" in str(err.value)


def test_dump_is_plain_yaml():
    data = yaml.safe_load(preset("pendulum_table1").dump())
    assert data["schema"] == "handsoff.run/1"
    assert data["train"]["noise"] == {"kind": "uniform", "low": -1.0, "high": 1.0}
