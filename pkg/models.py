"""
Data models for the single-pixel imaging BCNN toolkit.
"""

import math
from enum import Enum
from dataclasses import dataclass, field
from typing import Optional, List, Tuple

import numpy as np
import torch

from errors import ConfigError, DimensionError

# 2-D grayscale image, row-major, values in [0, 1]
ImageTensor = np.ndarray


class Likelihood(Enum):
    LAPLACIAN = "laplacian"
    GAUSSIAN  = "gaussian"
    BERNOULLI = "bernoulli"

    @property
    def out_channels(self) -> int:
        """Bernoulli heads emit mu only; the others emit (mu, sigma)."""
        return 1 if self is Likelihood.BERNOULLI else 2


class StopReason(Enum):
    CONVERGED_ATOL = "converged-atol"
    CONVERGED_BTOL = "converged-btol"
    MAX_ITER       = "max-iter"
    CONDITION_LIMIT = "condition-limit"   # only reachable with conlim > 0


# ═══════════════════════════════════════════
# PATTERNS
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class HadamardMatrix:
    order: int
    entries: np.ndarray          # order x order, int64, values in {+1, -1}


@dataclass(frozen=True)
class PatternOrdering:
    image_side: int
    order: Tuple[Tuple[int, int], ...]
    sequency: Tuple[int, ...]    # sign changes of each Hadamard row

    def __len__(self) -> int:
        return len(self.order)


# ═══════════════════════════════════════════
# SENSING
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class SensingConfig:
    image_side: int
    m: int
    snr_db: Optional[float] = None     # None = noiseless
    noise_seed: Optional[int] = None

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"measurement count must be >= 1, got {self.m}")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ConfigError(f"snr_db must be finite or None (noiseless), got {self.snr_db}")

    @property
    def compression_ratio(self) -> float:
        return self.image_side ** 2 / self.m

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None


@dataclass(frozen=True)
class MeasurementVector:
    values: np.ndarray
    config: SensingConfig

    def __post_init__(self):
        if self.values.shape != (self.config.m,):
            raise DimensionError(
                f"measurement vector length {self.values.shape} does not match m={self.config.m}"
            )


# ═══════════════════════════════════════════
# RECONSTRUCTION
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class LsqrOptions:
    max_iterations: int = 200
    atol: float = 1e-8
    btol: float = 1e-8
    conlim: float = 0.0          # 0 = disabled
    debug: bool = False          # run the adjoint consistency check first

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("lsqr.max_iterations must be >= 1")
        for name in ("atol", "btol"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"lsqr.{name} must lie in (0, 1), got {value}")
        if self.conlim < 0:
            raise ConfigError("lsqr.conlim must be >= 0")


@dataclass
class LsqrResult:
    solution: np.ndarray
    iterations: int
    stop_reason: StopReason
    residual_norm: float


# ═══════════════════════════════════════════
# NETWORK
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 3
    base_channels: int = 32
    dropout_rate: float = 0.1
    l2_factor: float = 1e-6
    likelihood: Likelihood = Likelihood.BERNOULLI
    sigma_floor: float = 1e-3
    bernoulli_clamp: float = 1e-7
    bernoulli_reduction: str = "sum"   # or "mean" over pixels

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError("network.levels must be >= 1")
        if self.base_channels < 1:
            raise ConfigError("network.base_channels must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"network.dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.l2_factor < 0:
            raise ConfigError("network.l2_factor must be >= 0")
        if self.sigma_floor <= 0:
            raise ConfigError("network.sigma_floor must be > 0")
        if not 0.0 < self.bernoulli_clamp < 0.5:
            raise ConfigError("network.bernoulli_clamp must lie in (0, 0.5)")
        if self.bernoulli_reduction not in ("sum", "mean"):
            raise ConfigError("network.bernoulli_reduction must be 'sum' or 'mean'")


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "linear"          # "linear" or "constant"
    start: float = 5e-3
    end: float = 5e-5

    def __post_init__(self):
        if self.kind not in ("linear", "constant"):
            raise ConfigError(f"unknown lr schedule '{self.kind}'")
        if self.start <= 0 or (self.kind == "linear" and self.end <= 0):
            raise ConfigError("learning rates must be > 0")

    def rate(self, epoch: int, epochs: int) -> float:
        """Linear from start at epoch 0 to end at the final epoch."""
        if self.kind == "constant" or epochs <= 1:
            return self.start
        t = epoch / (epochs - 1)
        return self.start + (self.end - self.start) * t


@dataclass(frozen=True)
class TrainingConfig:
    lr_schedule: LrSchedule = field(default_factory=LrSchedule)
    batch_size: int = 40
    epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_seed: int = 0
    init_seed: int = 0
    dropout_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("training.batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("training.epochs must be >= 0")


@dataclass
class PredictionMaps:
    mu: torch.Tensor                   # (B, H, W)
    sigma: Optional[torch.Tensor] = None   # None for Bernoulli


@dataclass
class PredictionResult:
    k: int
    seed: int
    likelihood: Likelihood
    mean: np.ndarray
    total: np.ndarray
    data: np.ndarray
    model: np.ndarray
    samples_mu: Optional[np.ndarray] = None       # (K, H, W)
    samples_sigma: Optional[np.ndarray] = None


# ═══════════════════════════════════════════
# EVALUATION
# ═══════════════════════════════════════════

METRICS_HEADER = [
    "compression", "likelihood", "mae_mean", "mae_std", "ssim_mean",
    "ssim_std", "r2_mean", "data_unc_mean", "model_unc_mean",
]


@dataclass
class EvaluationRow:
    compression: float
    likelihood: str
    mae_mean: float
    mae_std: float
    ssim_mean: float
    ssim_std: float
    r2_mean: Optional[float]
    data_unc_mean: float
    model_unc_mean: float
    count: int = 0
    r2_count: int = 0

    def csv_row(self) -> List[str]:
        def fmt(value: Optional[float]) -> str:
            return "" if value is None else repr(float(value))
        return [
            f"{self.compression:g}", self.likelihood,
            fmt(self.mae_mean), fmt(self.mae_std),
            fmt(self.ssim_mean), fmt(self.ssim_std),
            fmt(self.r2_mean),
            fmt(self.data_unc_mean), fmt(self.model_unc_mean),
        ]


# ═══════════════════════════════════════════
# DATASETS
# ═══════════════════════════════════════════

@dataclass
class Dataset:
    name: str
    side: int
    train: np.ndarray            # (count, side, side) float64 in [0, 1]
    val: np.ndarray
    test: np.ndarray
    split_seed: int

    @property
    def counts(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


@dataclass
class SimulatedSet:
    """Contents of one SPI1 container: truths, measurements, optional LSQR inputs."""
    image_side: int
    m: int
    snr_db: Optional[float]
    truths: np.ndarray                    # (count, n, n) float32
    measurements: np.ndarray              # (count, m) float32
    reconstructions: Optional[np.ndarray] = None   # (count, n, n) float32

    @property
    def count(self) -> int:
        return len(self.truths)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    lr: float
