from pathlib import Path

import pytest
import yaml

from tpl_monitor.config.run_config import ConfigManager, RunConfig, save_config
from tpl_monitor.config.settings import Settings
from tpl_monitor.core.errors import ArgumentError, DataError


def test_defaults_without_file():
    config = ConfigManager().build()
    assert config == RunConfig()
    assert config.tests.alpha == 0.10
    assert config.fit.n_starts == 3
    assert config.fit.profile_points == 161
    assert config.bootstrap.reference_iterations == 1000
    assert config.bootstrap.max_conditioning == 2.5
    assert config.thresholds.vote_cap == 2
    assert len(config.simulation.designs) == 6


def test_flags_override_file_override_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 7\ntests:\n  alpha: 0.05\nbootstrap:\n  iterations: 30\n")
    config = ConfigManager(path).build({"tests.alpha": 0.01, "seed": None})
    assert config.seed == 7
    assert config.tests.alpha == 0.01
    assert config.bootstrap.iterations == 30
    assert config.bootstrap.samples_per_group == 3


def test_bundled_config_matches_defaults():
    assert ConfigManager(Path(__file__).resolve().parents[1] / "config.yaml").build() == RunConfig()


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("tests:\n  alpah: 0.05\n")
    with pytest.raises(ArgumentError, match="tests.alpah"):
        ConfigManager(path).build()


def test_invalid_value_is_rejected():
    with pytest.raises(ArgumentError, match="alpha"):
        ConfigManager().build({"tests.alpha": 1.5})


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(DataError):
        ConfigManager(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("tests: [unclosed\n")
    with pytest.raises(DataError):
        ConfigManager(bad)
    listed = tmp_path / "list.yaml"
    listed.write_text("- 1\n- 2\n")
    with pytest.raises(DataError):
        ConfigManager(listed)


def test_saved_config_rebuilds_identically(tmp_path):
    config = ConfigManager().build({"seed": 3, "simulation.rho": 0.5, "paths.out": "somewhere"})
    path = save_config(config, tmp_path / "effective_config.yaml")
    assert yaml.safe_load(path.read_text())["simulation"]["rho"] == 0.5
    assert ConfigManager(path).build() == config


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("TPL_MONITOR_WORKERS", "3")
    monkeypatch.setenv("TPL_MONITOR_LOG_LEVEL", "debug")
    settings = Settings()
    assert settings.workers == 3
    assert settings.workers_from_env
    assert settings.log_level == "DEBUG"
    assert settings.validate()


def test_settings_reject_bad_values(monkeypatch):
    monkeypatch.setenv("TPL_MONITOR_WORKERS", "0")
    with pytest.raises(ArgumentError):
        Settings().validate()
    monkeypatch.setenv("TPL_MONITOR_WORKERS", "2")
    monkeypatch.setenv("TPL_MONITOR_LOG_LEVEL", "LOUD")
    with pytest.raises(ArgumentError):
        Settings().validate()


def test_non_integer_workers_fail_validation_not_import(monkeypatch):
    monkeypatch.setenv("TPL_MONITOR_WORKERS", "four")
    settings = Settings()
    assert settings.workers is None
    with pytest.raises(ArgumentError, match="four"):
        settings.validate()


def test_simulation_preset_names(tmp_path):
    assert RunConfig().simulation.preset == "default"
    path = tmp_path / "run.yaml"
    path.write_text("simulation:\n  preset: paper-like\n")
    with pytest.raises(ArgumentError, match="simulation.preset"):
        ConfigManager(path).build()
