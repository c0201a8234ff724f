"""
Experiment configuration: one strict JSON document per run.

    {
      "version": 1,
      "seed": 0,
      "workers": 1,
      "dataset":    {...},
      "sensing":    {...},
      "lsqr":       {...},
      "network":    {...},
      "training":   {...},
      "prediction": {...},
      "output":     {...}
    }

Unknown keys at any depth are errors, reported by dotted path.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace, MISSING
from pathlib import Path
from typing import Optional, Tuple, Union

from config.settings import GLOBAL_SEED, OUTPUT_DIR, WORKERS
from errors import ConfigError
from models import Likelihood, LrSchedule, LsqrOptions, NetworkConfig, TrainingConfig

CONFIG_VERSION = 1
DATASET_NAMES = ("mnist", "stl10", "synthetic")

# Fields that do not change any result; left out of config_hash.
_UNHASHED = {("workers",), ("output", "directory")}


# ═══════════════════════════════════════════
# SECTIONS
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class DatasetSpec:
    name: str
    side: int = 32
    train: int = 800
    val: int = 100
    test: int = 100
    split_seed: int = 0
    paths: Tuple[str, ...] = ()     # environment variables are expanded

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise ConfigError(f"dataset.name must be one of {DATASET_NAMES}, got '{self.name}'")
        if self.side < 2 or self.side & (self.side - 1):
            raise ConfigError(f"dataset.side must be a power of two >= 2, got {self.side}")
        if self.train < 1 or self.test < 1 or self.val < 0:
            raise ConfigError("dataset split counts must be train >= 1, val >= 0, test >= 1")
        for entry in self.paths:
            _check_type(entry, str, "dataset.paths")
        if self.name != "synthetic" and not self.paths:
            raise ConfigError(f"dataset.paths is required for '{self.name}'")

    @property
    def counts(self) -> Tuple[int, int, int]:
        return self.train, self.val, self.test

    def resolved_paths(self) -> Tuple[Path, ...]:
        return tuple(Path(os.path.expandvars(p)) for p in self.paths)


@dataclass(frozen=True)
class SensingSpec:
    compression_ratios: Tuple[float, ...]
    snr_db: Tuple[Optional[float], ...] = (None,)   # null = noiseless

    def __post_init__(self):
        if not self.compression_ratios:
            raise ConfigError("sensing.compression_ratios must not be empty")
        if not self.snr_db:
            raise ConfigError("sensing.snr_db must not be empty")
        for ratio in self.compression_ratios:
            _check_type(ratio, float, "sensing.compression_ratios")
            if not ratio >= 1:
                raise ConfigError(f"sensing.compression_ratios: {ratio} is below 1")
        for snr in self.snr_db:
            if snr is not None:
                _check_type(snr, float, "sensing.snr_db")

    def measurement_count(self, side: int, ratio: float) -> int:
        m = side * side / ratio
        if m != int(m) or m < 1:
            raise ConfigError(f"compression ratio {ratio:g} does not give a whole row count for side {side}")
        return int(m)


@dataclass(frozen=True)
class NetworkSpec:
    levels: int = 3
    base_channels: int = 32
    dropout_rate: float = 0.1
    l2_factor: float = 1e-6
    likelihoods: Tuple[str, ...] = ("bernoulli",)
    sigma_floor: float = 1e-3
    bernoulli_clamp: float = 1e-7
    bernoulli_reduction: str = "sum"

    def __post_init__(self):
        if not self.likelihoods:
            raise ConfigError("network.likelihoods must not be empty")
        for name in self.likelihoods:
            if name not in {l.value for l in Likelihood}:
                raise ConfigError(f"network.likelihoods: unknown likelihood '{name}'")
        self.network_config(self.likelihoods[0])

    def network_config(self, likelihood: Union[str, Likelihood]) -> NetworkConfig:
        return NetworkConfig(
            levels=self.levels,
            base_channels=self.base_channels,
            dropout_rate=self.dropout_rate,
            l2_factor=self.l2_factor,
            likelihood=Likelihood(likelihood),
            sigma_floor=self.sigma_floor,
            bernoulli_clamp=self.bernoulli_clamp,
            bernoulli_reduction=self.bernoulli_reduction,
        )


@dataclass(frozen=True)
class TrainingSpec:
    lr_schedule: LrSchedule = field(default_factory=LrSchedule)
    batch_size: int = 40
    epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.training_config(0, 0, 0)

    def training_config(self, shuffle_seed: int, init_seed: int, dropout_seed: int) -> TrainingConfig:
        return TrainingConfig(
            lr_schedule=self.lr_schedule,
            batch_size=self.batch_size,
            epochs=self.epochs,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            shuffle_seed=shuffle_seed,
            init_seed=init_seed,
            dropout_seed=dropout_seed,
        )


@dataclass(frozen=True)
class PredictionSpec:
    k: int = 64
    chunk_size: int = 64
    pooled_r2: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("prediction.k must be >= 1")
        if self.chunk_size < 1:
            raise ConfigError("prediction.chunk_size must be >= 1")


@dataclass(frozen=True)
class OutputSpec:
    directory: str = OUTPUT_DIR
    samples: int = 4              # test images exported as PGM per cell
    checkpoints: bool = True

    def __post_init__(self):
        if self.samples < 0:
            raise ConfigError("output.samples must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    sensing: SensingSpec
    lsqr: LsqrOptions = field(default_factory=LsqrOptions)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    prediction: PredictionSpec = field(default_factory=PredictionSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    version: int = CONFIG_VERSION
    seed: int = GLOBAL_SEED
    workers: int = WORKERS

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version} (expected {CONFIG_VERSION})")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        side = self.dataset.side
        if side % (2 ** self.network.levels):
            raise ConfigError(f"dataset.side {side} is not divisible by 2^network.levels")
        for ratio in self.sensing.compression_ratios:
            self.sensing.measurement_count(side, ratio)
        if self.training.epochs and self.training.batch_size > self.dataset.train:
            raise ConfigError("training.batch_size exceeds dataset.train")


# ═══════════════════════════════════════════
# PARSING
# ═══════════════════════════════════════════

def _check_type(value, expected, path: str):
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif expected is str:
        ok = isinstance(value, str)
    else:
        return value
    if not ok:
        raise ConfigError(f"'{path}' must be of type {expected.__name__}, got {value!r}")
    return float(value) if expected is float else value


def _section(cls, data, path: str, nested: Optional[dict] = None):
    """Build dataclass `cls` from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"'{path}' must be an object")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key '{path}.{key}'" if path else f"unknown key '{key}'")

    kwargs = {}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else key
        if nested and key in nested:
            kwargs[key] = nested[key](value, key_path)
            continue
        f = known[key]
        default = f.default if f.default is not MISSING else None
        if isinstance(default, tuple) or f.type in (Tuple[str, ...], Tuple[float, ...], Tuple[Optional[float], ...]):
            if not isinstance(value, list):
                raise ConfigError(f"'{key_path}' must be a list")
            value = tuple(value)
        elif default is not None:
            value = _check_type(value, type(default), key_path)
        kwargs[key] = value

    missing = [f.name for f in known.values()
               if f.name not in kwargs and f.default is MISSING and f.default_factory is MISSING]
    if missing:
        raise ConfigError(f"missing key '{path}.{missing[0]}'" if path else f"missing key '{missing[0]}'")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"'{path or 'config'}': {exc}") from exc


def _sensing(data, path: str) -> SensingSpec:
    spec = _section(SensingSpec, data, path)
    return replace(
        spec,
        compression_ratios=tuple(float(r) for r in spec.compression_ratios),
        snr_db=tuple(None if s is None else float(s) for s in spec.snr_db),
    )


def _training(data, path: str) -> TrainingSpec:
    return _section(TrainingSpec, data, path, nested={
        "lr_schedule": lambda value, p: _section(LrSchedule, value, p),
    })


def parse_config(data: dict, check_paths: bool = True) -> ExperimentConfig:
    cfg = _section(ExperimentConfig, data, "", nested={
        "dataset": lambda value, p: _section(DatasetSpec, value, p),
        "sensing": _sensing,
        "lsqr": lambda value, p: _section(LsqrOptions, value, p),
        "network": lambda value, p: _section(NetworkSpec, value, p),
        "training": _training,
        "prediction": lambda value, p: _section(PredictionSpec, value, p),
        "output": lambda value, p: _section(OutputSpec, value, p),
    })
    if check_paths:
        for path in cfg.dataset.resolved_paths():
            if not path.exists():
                raise ConfigError(f"dataset path does not exist: {path}")
    return cfg


def load_config(path: Union[str, Path], check_paths: bool = True) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data, check_paths)


def apply_overrides(
    cfg: ExperimentConfig,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    """CLI flags win over the file."""
    if out is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=str(out)))
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if workers is not None:
        cfg = replace(cfg, workers=int(workers))
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    data = asdict(cfg)
    for section in data.values():
        if isinstance(section, dict):
            for key, value in section.items():
                if isinstance(value, tuple):
                    section[key] = list(value)
    return data


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON (sorted keys, no whitespace) of every result-bearing field."""
    data = config_to_dict(cfg)
    for keys in _UNHASHED:
        target = data
        for key in keys[:-1]:
            target = target[key]
        target.pop(keys[-1], None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
