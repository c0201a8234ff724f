import copy

import pytest

from config.experiment import (
    apply_overrides,
    config_hash,
    config_to_dict,
    load_config,
    parse_config,
)
from conftest import REPO_ROOT
from errors import ConfigError
from models import Likelihood

PRESETS = sorted((REPO_ROOT / "configs").glob("*.json"))


def _with(data, section, **values):
    data = copy.deepcopy(data)
    data[section].update(values)
    return data


def test_smoke_config_parses(smoke_config):
    cfg = parse_config(smoke_config)
    assert cfg.dataset.counts == (4, 2, 2)
    assert cfg.sensing.compression_ratios == (8.0,)
    assert cfg.sensing.snr_db == (25.0,)
    assert cfg.lsqr.max_iterations == 50
    assert cfg.lsqr.atol == 1e-8
    assert cfg.training.lr_schedule.end == 5e-5
    assert cfg.network.network_config("bernoulli").likelihood is Likelihood.BERNOULLI


@pytest.mark.parametrize("path", PRESETS, ids=lambda p: p.stem)
def test_shipped_presets_parse(path):
    cfg = load_config(path, check_paths=False)
    assert cfg.version == 1


def test_unknown_nested_key_names_its_path(smoke_config):
    smoke_config["training"]["learning_rte"] = 0.01
    with pytest.raises(ConfigError, match=r"unknown key 'training\.learning_rte'"):
        parse_config(smoke_config)


def test_unknown_deeply_nested_key(smoke_config):
    smoke_config["training"]["lr_schedule"]["stop"] = 0.01
    with pytest.raises(ConfigError, match=r"training\.lr_schedule\.stop"):
        parse_config(smoke_config)


def test_unknown_top_level_key(smoke_config):
    smoke_config["epochs"] = 3
    with pytest.raises(ConfigError, match="unknown key 'epochs'"):
        parse_config(smoke_config)


def test_missing_section(smoke_config):
    del smoke_config["sensing"]
    with pytest.raises(ConfigError, match="missing key 'sensing'"):
        parse_config(smoke_config)


def test_unsupported_version(smoke_config):
    smoke_config["version"] = 2
    with pytest.raises(ConfigError, match="version"):
        parse_config(smoke_config)


@pytest.mark.parametrize("section,key,value", [
    ("training", "epochs", "2"),
    ("training", "epochs", 2.5),
    ("training", "batch_size", True),
    ("network", "dropout_rate", "0.1"),
    ("output", "checkpoints", 1),
    ("sensing", "compression_ratios", 8),
    ("sensing", "compression_ratios", ["8"]),
    ("dataset", "paths", [7]),
    ("dataset", "paths", [None]),
])
def test_type_errors(smoke_config, section, key, value):
    with pytest.raises(ConfigError, match=key):
        parse_config(_with(smoke_config, section, **{key: value}))


def test_integers_are_accepted_for_floats(smoke_config):
    cfg = parse_config(_with(smoke_config, "network", dropout_rate=0))
    assert cfg.network.dropout_rate == 0.0
    assert isinstance(cfg.network.dropout_rate, float)


@pytest.mark.parametrize("section,values", [
    ("sensing", {"compression_ratios": [3]}),
    ("sensing", {"compression_ratios": [0.5]}),
    ("sensing", {"snr_db": []}),
    ("dataset", {"side": 24}),
    ("dataset", {"name": "cifar"}),
    ("network", {"likelihoods": ["poisson"]}),
    ("network", {"levels": 6}),
    ("network", {"dropout_rate": 1.0}),
    ("training", {"batch_size": 5}),
    ("lsqr", {"atol": 0.0}),
    ("prediction", {"k": 0}),
])
def test_invalid_values(smoke_config, section, values):
    with pytest.raises(ConfigError):
        parse_config(_with(smoke_config, section, **values))


def test_noiseless_entry(smoke_config):
    cfg = parse_config(_with(smoke_config, "sensing", snr_db=[None, 10]))
    assert cfg.sensing.snr_db == (None, 10.0)


def test_measurement_count(smoke_config):
    sensing = parse_config(smoke_config).sensing
    assert sensing.measurement_count(32, 8) == 128
    assert sensing.measurement_count(32, 1) == 1024
    with pytest.raises(ConfigError):
        sensing.measurement_count(32, 3)


def test_dataset_paths_are_checked(smoke_config, tmp_path):
    smoke_config["dataset"] = {"name": "mnist", "side": 32, "train": 4, "val": 2, "test": 2,
                               "paths": [str(tmp_path / "missing.gz")]}
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(smoke_config)
    assert parse_config(smoke_config, check_paths=False).dataset.name == "mnist"


def test_dataset_paths_expand_environment(smoke_config, idx_file, tmp_path, monkeypatch):
    monkeypatch.setenv("SPI_MNIST_DIR", str(tmp_path))
    smoke_config["dataset"] = {"name": "mnist", "side": 32, "train": 4, "val": 2, "test": 2,
                               "paths": ["${SPI_MNIST_DIR}/train-images-idx3-ubyte.gz"]}
    cfg = parse_config(smoke_config)
    assert cfg.dataset.resolved_paths() == (idx_file[0],)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_written_config_reloads_identically(smoke_config, write_config):
    cfg = parse_config(smoke_config)
    assert load_config(write_config(config_to_dict(cfg))) == cfg


def test_hash_ignores_output_directory_and_workers(smoke_config):
    cfg = parse_config(smoke_config)
    moved = apply_overrides(cfg, out="/elsewhere", workers=4)
    assert moved.output.directory == "/elsewhere"
    assert moved.workers == 4
    assert config_hash(moved) == config_hash(cfg)


def test_hash_tracks_result_bearing_fields(smoke_config):
    cfg = parse_config(smoke_config)
    assert config_hash(apply_overrides(cfg, seed=1)) != config_hash(cfg)
    assert config_hash(parse_config(_with(smoke_config, "prediction", k=8))) != config_hash(cfg)
    assert len(config_hash(cfg)) == 64


def test_apply_overrides_without_flags(smoke_config):
    cfg = parse_config(smoke_config)
    assert apply_overrides(cfg) is cfg
