import json

import pytest

from config import (DEFAULT_CONFIG, WORKERS_ENV, ExperimentConfig, apply_override, load_config, validate_config,
                    write_resolved)
from errors import ConfigError


def test_defaults_validate():
    cfg = validate_config({})
    assert cfg.attack.name == "vra"
    assert cfg.attack.q_max == 100
    assert cfg.sweep.budgets == [1, 10, 100]
    assert cfg.data_root == cfg.output_dir / "data"


def test_shipped_config_loads():
    cfg = load_config(DEFAULT_CONFIG)
    assert cfg.attack.epsilon == pytest.approx(4 / 255, abs=1e-6)
    assert 0 in cfg.overlap.levels


def test_overrides_are_parsed_as_yaml():
    cfg = load_config(None, ["attack.q_max=10", "sweep.budgets=[1, 5]", "attack.clip_to_valid_range=false"])
    assert cfg.attack.q_max == 10
    assert cfg.sweep.budgets == [1, 5]
    assert cfg.attack.clip_to_valid_range is False


def test_override_creates_nested_keys():
    raw = apply_override({}, "eval.output_dir=/tmp/x")
    assert raw == {"eval": {"output_dir": "/tmp/x"}}


@pytest.mark.parametrize("assignment", ["attack.q_max", "attack..q_max=3", "=3"])
def test_malformed_overrides(assignment):
    with pytest.raises(ConfigError):
        apply_override({}, assignment)


def test_override_cannot_descend_into_scalar():
    with pytest.raises(ConfigError) as info:
        apply_override({"attack": 3}, "attack.q_max=5")
    assert info.value.key == "attack.q_max"


@pytest.mark.parametrize("raw, key", [
    ({"attack": {"q_max": 0}}, "attack.q_max"),
    ({"attack": {"epsilon": -0.1}}, "attack.epsilon"),
    ({"attack": {"name": "opt"}}, "attack.name"),
    ({"attack": {"bogus": 1}}, "attack.bogus"),
    ({"sweep": {"attacks": []}}, "sweep.attacks"),
    ({"sweep": {"budgets": [10, 1]}}, "sweep.budgets"),
    ({"overlap": {"levels": [1, 2, 3]}}, "overlap.levels"),
    ({"overlap": {"levels": [0, 4]}}, "overlap.levels"),
])
def test_invalid_values_name_the_offending_key(raw, key):
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    assert info.value.key == key
    assert key in str(info.value)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yml")
    bad = tmp_path / "bad.yml"
    bad.write_text("attack: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    scalar = tmp_path / "scalar.yml"
    scalar.write_text("42\n")
    with pytest.raises(ConfigError):
        load_config(scalar)


def test_json_config_is_accepted(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"attack": {"name": "random_noise", "q_max": 7}}))
    cfg = load_config(path)
    assert (cfg.attack.name, cfg.attack.q_max) == ("random_noise", 7)


def test_attack_config_carries_section_values():
    cfg = load_config(None, ["attack.epsilon=0.03", "attack.direction_mode=random", "attack.layers=[block3]"])
    attack = cfg.attack_config()
    assert attack.epsilon == 0.03
    assert attack.direction_mode == "random"
    assert attack.layers == ("block3",)
    assert cfg.attack_config(q_max=3).q_max == 3


def test_train_config_presets_and_overrides():
    cfg = load_config(None, ["train.epochs=2", "data.frames=4"])
    train = cfg.train_config()
    assert train.epochs == 2
    assert train.warmup_epochs == 1
    assert train.frames_per_clip == 4
    full = load_config(None, ["train.preset=full"]).train_config()
    assert full.epochs == 100


def test_arch_uses_role_specific_blocks():
    cfg = ExperimentConfig()
    assert cfg.arch("source", 5).block_type == "conv3d"
    assert cfg.arch("target", 5).block_type == "r2plus1d"
    assert cfg.arch("target", 5).n_classes == 5


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert ExperimentConfig().workers() == 3
    assert load_config(None, ["eval.workers=2"]).workers() == 2
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        ExperimentConfig().workers()


def test_hash_tracks_resolved_values():
    a = load_config(None, ["attack.q_max=10"])
    b = load_config(None, ["attack.q_max=10"])
    c = load_config(None, ["attack.q_max=11"])
    assert a.hash() == b.hash()
    assert a.hash() != c.hash()


def test_write_resolved(tmp_path):
    cfg = load_config(None, [f"eval.output_dir={tmp_path / 'run'}"])
    path = write_resolved(cfg, "1.2.3")
    saved = json.loads(path.read_text())
    assert saved["config_hash"] == cfg.hash()
    assert validate_config(saved["config"]) == cfg
    assert (tmp_path / "run" / "VERSION").read_text().strip() == "1.2.3"
