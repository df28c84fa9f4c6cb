from pathlib import Path

import pytest

import dualstr
from dualstr.config import (
    CONFIG_ENV,
    RunConfig,
    find_config_file,
    key_lines,
    load_run_config,
    packaged_config,
)
from dualstr.errors import ConfigError, ConfigKeyError


def test_packaged_defaults_load():
    """The shipped config.ini validates and matches the model defaults"""
    config = load_run_config(Path(dualstr.__file__).parent / "config.ini")
    assert config.model.max_label_length == 25
    assert config.masks.k == 6
    assert config.adapter.lam == pytest.approx(0.2)
    assert config.optim.total_steps is None


def test_desk_recipe_loads():
    config = load_run_config(packaged_config("desk"), required=[("optim", "total_steps")])
    assert config.optim.total_steps == 2000
    assert config.optim.batch == 32
    assert config.optim.encoder_peak_lr == pytest.approx(5e-4)


def test_env_var_takes_precedence(config_file):
    path = config_file("[masks]\nk = 4\n")
    assert find_config_file() == path
    assert load_run_config().masks.k == 4


def test_unknown_key_names_its_line(config_file):
    config_file("[model]\nimage_h = 32\n\n[masks]\nk = 6\nkk = 2\n")
    with pytest.raises(ConfigKeyError) as info:
        load_run_config()
    assert info.value.section == "masks"
    assert info.value.key == "kk"
    assert info.value.line == 6
    assert "unknown key" in info.value.message


def test_unknown_section(config_file):
    config_file("[model]\npatch = 8\n[mdoel]\npatch = 4\n")
    with pytest.raises(ConfigKeyError) as info:
        load_run_config()
    assert info.value.section == "mdoel"
    assert info.value.line == 3


def test_invalid_value(config_file):
    config_file("[optim]\nbatch = -4\n")
    with pytest.raises(ConfigKeyError) as info:
        load_run_config()
    assert info.value.key == "batch"
    assert info.value.exit_code == 2


def test_required_key_missing(config_file):
    config_file("[optim]\nbatch = 8\n")
    with pytest.raises(ConfigKeyError) as info:
        load_run_config(required=[("optim", "total_steps"), ("optim", "batch")])
    assert info.value.key == "total_steps"


def test_shape_checks():
    with pytest.raises(ConfigKeyError):
        RunConfig().with_overrides(model={"image_w": 100})
    with pytest.raises(ConfigKeyError):
        RunConfig().with_overrides(optim={"batch": 10, "accum_steps": 4})
    with pytest.raises(ConfigKeyError):
        RunConfig().with_overrides(adapter={"reduction": 3})


def test_adapter_lists_and_lambda_alias(config_file):
    config_file("[adapter]\nmode = ladder_side\nlambda = 0.5\nconnected_layers = 2, 4\n")
    adapter = load_run_config().adapter
    assert adapter.mode == "ladder_side"
    assert adapter.lam == 0.5
    assert adapter.connected_layers == [2, 4]


def test_snapshot_round_trip():
    config = RunConfig().with_overrides(optim={"batch": 64}, train={"seed": 9})
    snapshot = config.snapshot()
    assert snapshot["adapter"]["lambda"] == pytest.approx(0.2)
    assert RunConfig.from_snapshot(snapshot) == config


def test_missing_file(tmp_path, monkeypatch):
    monkeypatch.setenv(CONFIG_ENV, str(tmp_path / "absent.ini"))
    with pytest.raises(ConfigError):
        load_run_config()


def test_key_lines_skip_comments():
    lines = key_lines("# header\n[model]\n; note\npatch = 8\n")
    assert lines[("model", None)] == 2
    assert lines[("model", "patch")] == 4
