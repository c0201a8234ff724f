"""
Single-pixel forward model: y = A · vec(x), plus additive white Gaussian noise.

Noise power is referenced to the mean squared measurement value, DC term
included:  σ² = (1/m)·Σ y_i² · 10^(-snr_db/10).
"""

import math
import struct
from dataclasses import replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from errors import DimensionError, DegenerateSignalError, NumericError, FormatError
from models import ImageTensor, MeasurementVector, SensingConfig, SimulatedSet
from patterns import MeasurementMatrix
from run_logger import get_logger

logger = get_logger()

CONTAINER_MAGIC = b"SPI1"
CONTAINER_VERSION = 1              # truth + measurements
CONTAINER_VERSION_RECON = 2        # truth + measurements + LSQR reconstruction
_HEADER = struct.Struct("<4sIIIdI")


def derive_seed(*keys: int) -> int:
    """64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1, dtype=np.uint64)[0])


def measure(image: ImageTensor, A: MeasurementMatrix) -> MeasurementVector:
    """values[i] = ⟨pattern_i, image⟩."""
    image = np.asarray(image, dtype=np.float64)
    n = A.image_side
    if image.shape != (n, n):
        raise DimensionError(f"image shape {image.shape} does not match pattern side {n}")
    if not np.all(np.isfinite(image)):
        raise NumericError("image contains non-finite pixels")
    config = SensingConfig(image_side=n, m=A.m)
    return MeasurementVector(values=A.apply(image), config=config)


def add_awgn(y: MeasurementVector, snr_db: Optional[float], seed) -> MeasurementVector:
    """Add i.i.d. Gaussian noise at the given SNR; snr_db=None leaves y unchanged."""
    if snr_db is None:
        return y
    values = np.asarray(y.values, dtype=np.float64)
    if values.size == 0:
        raise DimensionError("cannot add noise to an empty measurement vector")
    power = float(np.mean(values ** 2))
    if power == 0.0:
        raise DegenerateSignalError(f"zero signal power with finite SNR {snr_db} dB")

    sigma = math.sqrt(power * 10.0 ** (-snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noisy = values + rng.normal(0.0, sigma, size=values.shape)
    config = replace(y.config, snr_db=float(snr_db), noise_seed=seed if isinstance(seed, int) else None)
    return MeasurementVector(values=noisy, config=config)


def empirical_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise_power = float(np.mean((np.asarray(noisy) - np.asarray(clean)) ** 2))
    return 10.0 * math.log10(float(np.mean(np.asarray(clean) ** 2)) / noise_power)


def simulate_batch(
    images: np.ndarray,
    A: MeasurementMatrix,
    snr_db: Optional[float],
    global_seed: int,
    offset: int = 0,
) -> np.ndarray:
    """
    Measure a stack of images; image i gets noise seed derive_seed(global_seed, offset + i).
    Results do not depend on batch composition or order.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise DimensionError(f"expected an image stack (count, n, n), got {images.shape}")
    out = np.empty((len(images), A.m))
    for i, image in enumerate(images):
        y = measure(image, A)
        out[i] = add_awgn(y, snr_db, derive_seed(global_seed, offset + i)).values
    return out


# ═══════════════════════════════════════════
# SPI1 CONTAINER
# ═══════════════════════════════════════════

def _record_dtype(n: int, m: int, with_recon: bool) -> np.dtype:
    fields = [("truth", "<f4", (n * n,)), ("y", "<f4", (m,))]
    if with_recon:
        fields.append(("recon", "<f4", (n * n,)))
    return np.dtype(fields)


def write_container(path: Union[str, Path], data: SimulatedSet) -> Path:
    """Header (magic, version, n, m, snr_db, count) then one record per image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, m = data.image_side, data.m
    with_recon = data.reconstructions is not None
    version = CONTAINER_VERSION_RECON if with_recon else CONTAINER_VERSION
    snr = math.inf if data.snr_db is None else float(data.snr_db)

    records = np.zeros(data.count, dtype=_record_dtype(n, m, with_recon))
    records["truth"] = np.asarray(data.truths).reshape(data.count, n * n)
    records["y"] = np.asarray(data.measurements).reshape(data.count, m)
    if with_recon:
        records["recon"] = np.asarray(data.reconstructions).reshape(data.count, n * n)

    with path.open("wb") as fh:
        fh.write(_HEADER.pack(CONTAINER_MAGIC, version, n, m, snr, data.count))
        fh.write(records.tobytes())
    logger.debug(f"Wrote {data.count} records (v{version}, n={n}, m={m}) to {path}")
    return path


def read_container(path: Union[str, Path]) -> SimulatedSet:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, m, snr, count = _HEADER.unpack_from(raw)
    if magic != CONTAINER_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version not in (CONTAINER_VERSION, CONTAINER_VERSION_RECON):
        raise FormatError(f"{path}: unsupported version {version}")

    dtype = _record_dtype(n, m, version == CONTAINER_VERSION_RECON)
    body = raw[_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        raise FormatError(f"{path}: expected {count * dtype.itemsize} payload bytes, found {len(body)}")
    records = np.frombuffer(body, dtype=dtype, count=count)

    return SimulatedSet(
        image_side=n,
        m=m,
        snr_db=None if math.isinf(snr) else snr,
        truths=records["truth"].reshape(count, n, n).copy(),
        measurements=records["y"].copy(),
        reconstructions=(
            records["recon"].reshape(count, n, n).copy()
            if version == CONTAINER_VERSION_RECON else None
        ),
    )
