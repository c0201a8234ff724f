"""
Bayesian (Monte Carlo dropout) U-Net for single-pixel image prediction.

Architecture for levels L and base width c (input side divisible by 2^L):

    encoder level i (i = 0..L-1), width c·2^i:
        [dropout → 3×3 conv → ReLU] ×2, then 2×2 max-pool
    bottleneck, width c·2^L:
        [dropout → 3×3 conv → ReLU] ×2
    decoder level i (deepest first), width c·2^i:
        ×2 nearest upsample → dropout → 3×3 conv → ReLU,
        concatenate the encoder skip,
        [dropout → 3×3 conv → ReLU] ×2
    head:
        dropout → 1×1 conv to 1 channel (Bernoulli) or 2 channels (μ, σ)

μ = logistic(z₀); σ = softplus(z₁) + ε_σ.

Dropout masks come from an explicit torch.Generator, so a forward pass is a
pure function of (weights, input, mask seed).
"""

import copy
import csv
import json
import math
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.optim.lr_scheduler import LambdaLR
from torch.utils.data import DataLoader, TensorDataset

from config.settings import MC_CHUNK_SIZE
from errors import CheckpointError, ConfigError, DataError, DimensionError, NumericError, TrainingError
from models import (
    EpochRecord,
    ImageTensor,
    Likelihood,
    NetworkConfig,
    PredictionMaps,
    PredictionResult,
    TrainingConfig,
)
from run_logger import get_logger
from sensing import derive_seed

logger = get_logger()

CHECKPOINT_MAGIC = b"BCNN"
CHECKPOINT_VERSION = 1

HISTORY_HEADER = ["epoch", "train_loss", "val_loss", "lr"]


def mask_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


# ═══════════════════════════════════════════
# ARCHITECTURE
# ═══════════════════════════════════════════

class MaskedDropout(nn.Module):
    """Inverted dropout driven by an explicit generator; no generator means inactive."""

    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate

    def forward(self, x: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        if generator is None or self.rate == 0.0:
            return x
        keep = torch.empty_like(x).bernoulli_(1.0 - self.rate, generator=generator)
        return x * keep / (1.0 - self.rate)


class ConvUnit(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, rate: float, kernel_size: int = 3, activate: bool = True):
        super().__init__()
        self.dropout = MaskedDropout(rate)
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2)
        self.activate = activate

    def forward(self, x, generator=None):
        x = self.conv(self.dropout(x, generator))
        return F.relu(x) if self.activate else x


class DoubleConv(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, rate: float):
        super().__init__()
        self.first = ConvUnit(in_channels, out_channels, rate)
        self.second = ConvUnit(out_channels, out_channels, rate)

    def forward(self, x, generator=None):
        return self.second(self.first(x, generator), generator)


class UpBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, rate: float):
        super().__init__()
        self.up = ConvUnit(in_channels, out_channels, rate)
        self.merge = DoubleConv(2 * out_channels, out_channels, rate)

    def forward(self, x, skip, generator=None):
        x = self.up(F.interpolate(x, scale_factor=2, mode="nearest"), generator)
        return self.merge(torch.cat([skip, x], dim=1), generator)


class BayesianUNet(nn.Module):
    """Dropout U-Net; the module is the network-weights object (parameters + descriptor)."""

    def __init__(self, config: NetworkConfig, input_side: int):
        super().__init__()
        if input_side < 1 or input_side % (2 ** config.levels):
            raise ConfigError(f"input side {input_side} not divisible by 2^{config.levels}")
        self.config = config
        self.input_side = input_side

        rate = config.dropout_rate
        widths = [config.base_channels * 2 ** i for i in range(config.levels)]
        bottom = config.base_channels * 2 ** config.levels

        in_channels = [1] + widths[:-1]
        self.encoders = nn.ModuleList(DoubleConv(cin, w, rate) for cin, w in zip(in_channels, widths))
        self.bottleneck = DoubleConv(widths[-1], bottom, rate)
        outer = [bottom] + widths[::-1][:-1]
        self.decoders = nn.ModuleList(UpBlock(cin, w, rate) for cin, w in zip(outer, widths[::-1]))
        self.head = ConvUnit(widths[0], config.likelihood.out_channels, rate, kernel_size=1, activate=False)

        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                bound = 1.0 / math.sqrt(module.in_channels * module.kernel_size[0] * module.kernel_size[1])
                nn.init.uniform_(module.weight, -bound, bound)
                nn.init.uniform_(module.bias, -bound, bound)

    def architecture(self) -> dict:
        descriptor = asdict(self.config)
        descriptor["likelihood"] = self.config.likelihood.value
        descriptor["input_side"] = self.input_side
        return descriptor

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor, generator: Optional[torch.Generator] = None) -> PredictionMaps:
        if x.dim() != 3 or x.shape[-2:] != (self.input_side, self.input_side):
            raise DimensionError(
                f"expected input (batch, {self.input_side}, {self.input_side}), got {tuple(x.shape)}"
            )
        h = x.unsqueeze(1)
        skips = []
        for encoder in self.encoders:
            h = encoder(h, generator)
            skips.append(h)
            h = F.max_pool2d(h, 2)
        h = self.bottleneck(h, generator)
        for decoder, skip in zip(self.decoders, reversed(skips)):
            h = decoder(h, skip, generator)
        z = self.head(h, generator)

        mu = torch.sigmoid(z[:, 0])
        sigma = None
        if self.config.likelihood.out_channels == 2:
            sigma = F.softplus(z[:, 1]) + self.config.sigma_floor
        return PredictionMaps(mu=mu, sigma=sigma)


def init_network(cfg: NetworkConfig, input_side: int, seed: int) -> BayesianUNet:
    """Fan-in scaled uniform init, deterministic given seed; global RNG left untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return BayesianUNet(cfg, input_side)


def _dtype_of(W: nn.Module) -> torch.dtype:
    return next(W.parameters()).dtype


def _as_batch(x: Union[ImageTensor, torch.Tensor], dtype: torch.dtype) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x, dtype=dtype)
    return x.unsqueeze(0) if x.dim() == 2 else x


def forward(
    W: BayesianUNet,
    x: Union[ImageTensor, torch.Tensor],
    dropout_active: bool = False,
    mask_seed: int = 0,
) -> PredictionMaps:
    """One pass; masks drawn from mask_seed when dropout is active."""
    batch = _as_batch(x, _dtype_of(W))
    maps = W(batch, mask_generator(mask_seed) if dropout_active else None)
    if not torch.isfinite(maps.mu).all() or (maps.sigma is not None and not torch.isfinite(maps.sigma).all()):
        raise NumericError("network produced non-finite activations")
    return maps


# ═══════════════════════════════════════════
# LOSSES
# ═══════════════════════════════════════════

def nll_loss(
    likelihood: Likelihood,
    maps: PredictionMaps,
    y: Union[ImageTensor, torch.Tensor],
    bernoulli_clamp: float = 1e-7,
    bernoulli_reduction: str = "sum",
) -> torch.Tensor:
    """Per-image negative log-likelihood, averaged over the batch."""
    mu = maps.mu
    target = torch.as_tensor(np.asarray(y) if not isinstance(y, torch.Tensor) else y, dtype=mu.dtype)
    target = target.reshape(mu.shape)
    if torch.any(target < 0) or torch.any(target > 1):
        raise DataError("targets must lie in [0, 1]")

    if likelihood is Likelihood.BERNOULLI:
        p = mu.clamp(bernoulli_clamp, 1.0 - bernoulli_clamp)
        per_pixel = (target - 1.0) * torch.log1p(-p) - target * torch.log(p)
        per_image = per_pixel.flatten(1)
        per_image = per_image.sum(dim=1) if bernoulli_reduction == "sum" else per_image.mean(dim=1)
        return per_image.mean()

    if maps.sigma is None:
        raise ConfigError(f"{likelihood.value} loss needs a sigma map")
    sigma = maps.sigma
    if likelihood is Likelihood.LAPLACIAN:
        per_pixel = (target - mu).abs() / sigma + torch.log(2.0 * sigma)
    else:
        per_pixel = (target - mu) ** 2 / (2.0 * sigma ** 2) + torch.log(math.sqrt(2.0 * math.pi) * sigma)
    return per_pixel.flatten(1).mean(dim=1).mean()


def l2_penalty(params: Iterable[torch.Tensor]) -> torch.Tensor:
    return sum(p.pow(2).sum() for p in params)


def total_loss(
    W: Union[nn.Module, Iterable[torch.Tensor]],
    likelihood: Likelihood,
    maps: PredictionMaps,
    y: Union[ImageTensor, torch.Tensor],
    l2_factor: float,
    bernoulli_clamp: float = 1e-7,
    bernoulli_reduction: str = "sum",
) -> torch.Tensor:
    """nll_loss + l2_factor · Σ (every kernel and bias entry)²."""
    params = W.parameters() if isinstance(W, nn.Module) else W
    loss = nll_loss(likelihood, maps, y, bernoulli_clamp, bernoulli_reduction)
    if l2_factor == 0.0:
        return loss
    return loss + l2_factor * l2_penalty(params)


def _loss_for(W: BayesianUNet, maps: PredictionMaps, y: torch.Tensor) -> torch.Tensor:
    cfg = W.config
    return total_loss(W, cfg.likelihood, maps, y, cfg.l2_factor, cfg.bernoulli_clamp, cfg.bernoulli_reduction)


# ═══════════════════════════════════════════
# TRAINING
# ═══════════════════════════════════════════

def _pair_tensors(pairs: Tuple[np.ndarray, np.ndarray], dtype: torch.dtype, side: int) -> TensorDataset:
    inputs, targets = pairs
    inputs = torch.as_tensor(np.asarray(inputs), dtype=dtype)
    targets = torch.as_tensor(np.asarray(targets), dtype=dtype)
    if inputs.shape != targets.shape:
        raise DataError(f"inputs {tuple(inputs.shape)} and targets {tuple(targets.shape)} differ")
    if len(inputs) and inputs.shape[1:] != (side, side):
        raise DataError(f"images must be {side}×{side}, got {tuple(inputs.shape[1:])}")
    return TensorDataset(inputs, targets)


def validation_loss(W: BayesianUNet, dataset: TensorDataset, batch_size: int) -> Optional[float]:
    """Mean total loss with dropout inactive; None for an empty set."""
    if len(dataset) == 0:
        return None
    cfg = W.config
    total, count = 0.0, 0
    with torch.no_grad():
        for xb, yb in DataLoader(dataset, batch_size=batch_size, shuffle=False):
            maps = W(xb)
            nll = nll_loss(cfg.likelihood, maps, yb, cfg.bernoulli_clamp, cfg.bernoulli_reduction)
            total += float(nll) * len(xb)
            count += len(xb)
        penalty = cfg.l2_factor * float(l2_penalty(W.parameters()))
    return total / count + penalty


def train(
    W0: BayesianUNet,
    train_set: Tuple[np.ndarray, np.ndarray],
    val_set: Tuple[np.ndarray, np.ndarray],
    tcfg: TrainingConfig,
) -> Tuple[BayesianUNet, List[EpochRecord]]:
    """
    Minibatch Adam on total_loss; lr per epoch from tcfg.lr_schedule.

    Step s draws its dropout masks from derive_seed(dropout_seed, s) and the
    shuffle order comes from shuffle_seed, so a single-process run is
    reproducible bit for bit.
    """
    if tcfg.epochs == 0:
        return W0, []

    dtype = _dtype_of(W0)
    train_data = _pair_tensors(train_set, dtype, W0.input_side)
    val_data = _pair_tensors(val_set, dtype, W0.input_side)
    if len(train_data) == 0:
        raise DataError("training set is empty")
    if tcfg.batch_size > len(train_data):
        raise DataError(f"batch size {tcfg.batch_size} exceeds training set size {len(train_data)}")

    model = copy.deepcopy(W0)
    model.train()
    schedule = tcfg.lr_schedule
    loader = DataLoader(
        train_data,
        batch_size=tcfg.batch_size,
        shuffle=True,
        generator=mask_generator(tcfg.shuffle_seed),
    )
    optimizer = torch.optim.Adam(
        model.parameters(), lr=schedule.start, betas=(tcfg.beta1, tcfg.beta2), eps=tcfg.adam_eps
    )
    scheduler = LambdaLR(optimizer, lambda epoch: schedule.rate(epoch, tcfg.epochs) / schedule.start)

    history: List[EpochRecord] = []
    last_state = copy.deepcopy(model.state_dict())
    step = 0
    for epoch in range(tcfg.epochs):
        lr = optimizer.param_groups[0]["lr"]
        running, batches = 0.0, 0
        for xb, yb in loader:
            maps = model(xb, mask_generator(derive_seed(tcfg.dropout_seed, step)))
            loss = _loss_for(model, maps, yb)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}", last_state, epoch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            running += loss.item()
            batches += 1
            step += 1

        last_state = copy.deepcopy(model.state_dict())
        val_loss = validation_loss(model, val_data, tcfg.batch_size)
        record = EpochRecord(epoch=epoch, train_loss=running / batches, val_loss=val_loss, lr=lr)
        history.append(record)
        logger.info(
            f"epoch {epoch + 1}/{tcfg.epochs} | loss={record.train_loss:.6f} | "
            f"val={'-' if val_loss is None else f'{val_loss:.6f}'} | lr={lr:.3e}"
        )
        scheduler.step()

    model.eval()
    return model, history


def write_history_csv(history: List[EpochRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for rec in history:
            val = "" if rec.val_loss is None else repr(rec.val_loss)
            writer.writerow([rec.epoch, repr(rec.train_loss), val, repr(rec.lr)])
    return path


# ═══════════════════════════════════════════
# MONTE CARLO PREDICTION
# ═══════════════════════════════════════════

def predict_mc(
    W: BayesianUNet,
    x: ImageTensor,
    K: int = 64,
    seed: int = 0,
    keep_samples: bool = False,
    chunk_size: int = MC_CHUNK_SIZE,
) -> PredictionResult:
    """
    K dropout passes over one image.

    Samples are drawn in chunks of chunk_size replicas; chunk j uses mask seed
    derive_seed(seed, j), so the result depends only on (W, x, K, seed, chunk_size).
    """
    if K < 1:
        raise ConfigError(f"sample count K must be >= 1, got {K}")
    image = _as_batch(x, _dtype_of(W))
    if image.shape[0] != 1:
        raise DimensionError("predict_mc takes a single image")

    mu_chunks, sigma_chunks = [], []
    with torch.no_grad():
        for chunk, start in enumerate(range(0, K, chunk_size)):
            size = min(chunk_size, K - start)
            maps = forward(W, image.expand(size, -1, -1), True, derive_seed(seed, chunk))
            mu_chunks.append(maps.mu.to(torch.float64).numpy())
            if maps.sigma is not None:
                sigma_chunks.append(maps.sigma.to(torch.float64).numpy())

    mu = np.concatenate(mu_chunks)
    sigma = np.concatenate(sigma_chunks) if sigma_chunks else None
    likelihood = W.config.likelihood

    mean = mu.mean(axis=0)
    model_var = ((mu - mean) ** 2).mean(axis=0)
    if likelihood is Likelihood.LAPLACIAN:
        data_var = (2.0 * sigma ** 2).mean(axis=0)
    elif likelihood is Likelihood.GAUSSIAN:
        data_var = (sigma ** 2).mean(axis=0)
    else:
        data_var = (mu * (1.0 - mu)).mean(axis=0)

    return PredictionResult(
        k=K,
        seed=seed,
        likelihood=likelihood,
        mean=mean,
        total=np.sqrt(data_var + model_var),
        data=np.sqrt(data_var),
        model=np.sqrt(model_var),
        samples_mu=mu if keep_samples else None,
        samples_sigma=sigma if keep_samples else None,
    )


# ═══════════════════════════════════════════
# CHECKPOINTS
# ═══════════════════════════════════════════
#
# magic "BCNN" | u32 version | u32 len + descriptor JSON | u32 tensor count |
# per tensor: u16 len + name | u8 ndim | u32 dims... | float32 LE data

def save_checkpoint(W: BayesianUNet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor = json.dumps(W.architecture(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    state = W.state_dict()

    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(descriptor)), descriptor]
    chunks.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        encoded = name.encode("utf-8")
        data = tensor.detach().cpu().numpy().astype("<f4")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{data.ndim}I", data.ndim, *data.shape))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def _config_from_descriptor(descriptor: dict) -> Tuple[NetworkConfig, int]:
    descriptor = dict(descriptor)
    side = descriptor.pop("input_side")
    descriptor["likelihood"] = Likelihood(descriptor["likelihood"])
    return NetworkConfig(**descriptor), side


def load_checkpoint(path: Union[str, Path]) -> BayesianUNet:
    raw = Path(path).read_bytes()
    try:
        if raw[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version, desc_len = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: version {version} != {CHECKPOINT_VERSION}")
        offset = 12
        descriptor = json.loads(raw[offset:offset + desc_len].decode("utf-8"))
        offset += desc_len
        cfg, side = _config_from_descriptor(descriptor)

        (count,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", raw, offset)
            shape = struct.unpack_from(f"<{ndim}I", raw, offset + 1)
            offset += 1 + 4 * ndim
            size = int(np.prod(shape)) * 4
            if offset + size > len(raw):
                raise CheckpointError(f"{path}: truncated tensor '{name}'")
            state[name] = torch.from_numpy(np.frombuffer(raw, "<f4", int(np.prod(shape)), offset).reshape(shape).copy())
            offset += size
        if offset != len(raw):
            raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    except CheckpointError:
        raise
    except (struct.error, UnicodeDecodeError, ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc

    try:
        model = BayesianUNet(cfg, side)
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:  # ConfigError included
        raise CheckpointError(f"{path}: tensors do not match descriptor ({exc})") from exc
    if not all(torch.isfinite(t).all() for t in state.values()):
        raise CheckpointError(f"{path}: non-finite parameters")
    model.eval()
    return model
