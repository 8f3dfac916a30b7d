import json

import pytest

from optiloop.config import RunConfig, Settings, load_run_config, settings
from optiloop.exceptions import ConfigError


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("LLM_PROVIDER", "http")
    monkeypatch.setenv("PROVIDER_MAX_RETRIES", "5")
    fresh = Settings(_env_file=None)
    assert fresh.LLM_PROVIDER == "http"
    assert fresh.PROVIDER_MAX_RETRIES == 5


def test_run_config_defaults():
    cfg = RunConfig()
    assert cfg.mbr.num_candidates == 5
    assert cfg.mbr.top_q == 3
    assert cfg.retrieval.pool_size == 9
    assert cfg.retrieval.select_k == 3
    assert cfg.retrieval.lambda_ == 0.5
    assert cfg.validation.max_iterations == 3
    assert cfg.consensus.num_variants == 3
    assert cfg.available_solvers == ["toy-bruteforce"]
    assert cfg.simulator == "expression"


def test_run_config_round_trips_through_json():
    cfg = RunConfig(retrieval={"lambda": 0.2}, seed=7)
    again = RunConfig.model_validate(json.loads(json.dumps(cfg.model_dump(mode="json", by_alias=True))))
    assert again == cfg


def test_file_values_override_settings(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "EMBEDDING_DIMENSION", 16)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 3, "validation": {"max_iterations": 5}}), encoding="utf-8")
    cfg = load_run_config(path, run_dir=str(tmp_path / "runs"))
    assert cfg.embedding_dimension == 16
    assert cfg.seed == 3
    assert cfg.validation.max_iterations == 5
    assert cfg.run_dir == str(tmp_path / "runs")


@pytest.mark.parametrize("content", ["{not json", "[1, 2]", json.dumps({"available_solvers": []}), json.dumps({"colour": "red"})])
def test_bad_config_files(tmp_path, content):
    path = tmp_path / "cfg.json"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.json")
