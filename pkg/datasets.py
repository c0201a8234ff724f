"""
Dataset loading: MNIST (IDX), STL-10 (binary) and seeded synthetic images.

All loaders end in the same place: float64 grayscale images in [0, 1] at a
power-of-two side, split into disjoint train / val / test stacks by a seeded
permutation.
"""

import gzip
import struct
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from config.experiment import DatasetSpec
from errors import DataError, DimensionError, FormatError
from models import Dataset, ImageTensor
from patterns import side_exponent
from run_logger import get_logger, sanitize_log_string

logger = get_logger()

IDX_MAGIC = 0x00000803            # unsigned byte, 3 dimensions
_IDX_HEADER = struct.Struct(">IIII")

STL10_SIDE = 96
STL10_RECORD = STL10_SIDE * STL10_SIDE * 3

LUMINANCE = np.array([0.299, 0.587, 0.114])


# ═══════════════════════════════════════════
# PARSERS
# ═══════════════════════════════════════════

def parse_idx(raw: bytes) -> np.ndarray:
    """IDX image file → (count, rows, cols) uint8."""
    if len(raw) < _IDX_HEADER.size:
        raise FormatError("IDX data shorter than its header")
    magic, count, rows, cols = _IDX_HEADER.unpack_from(raw)
    if magic != IDX_MAGIC:
        raise FormatError(f"bad IDX magic 0x{magic:08x} (expected 0x{IDX_MAGIC:08x})")
    expected = count * rows * cols
    payload = len(raw) - _IDX_HEADER.size
    if payload != expected:
        raise FormatError(f"IDX header promises {expected} pixel bytes, found {payload}")
    return np.frombuffer(raw, dtype=np.uint8, offset=_IDX_HEADER.size).reshape(count, rows, cols).copy()


def read_idx(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return parse_idx(fh.read())


def parse_stl10(raw: bytes) -> np.ndarray:
    """
    STL-10 binary → (count, 96, 96, 3) uint8.

    Each record is three channel planes (R, G, B), each stored column-major.
    """
    if len(raw) % STL10_RECORD:
        raise FormatError(f"STL-10 data length {len(raw)} is not a multiple of {STL10_RECORD}")
    planes = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3, STL10_SIDE, STL10_SIDE)
    return planes.transpose(0, 3, 2, 1).copy()


def read_stl10(path: Union[str, Path]) -> np.ndarray:
    """Memory-mapped view of an STL-10 .bin file, same layout as parse_stl10."""
    path = Path(path)
    size = path.stat().st_size
    if size % STL10_RECORD:
        raise FormatError(f"{path}: length {size} is not a multiple of {STL10_RECORD}")
    planes = np.memmap(path, dtype=np.uint8, mode="r").reshape(-1, 3, STL10_SIDE, STL10_SIDE)
    return planes.transpose(0, 3, 2, 1)


# ═══════════════════════════════════════════
# PREPROCESSING
# ═══════════════════════════════════════════

def to_luminance(stack: np.ndarray) -> np.ndarray:
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 4 and stack.shape[-1] == 3:
        return stack @ LUMINANCE
    if stack.ndim == 3:
        return stack
    raise DimensionError(f"expected (count, h, w) or (count, h, w, 3), got {stack.shape}")


def preprocess(stack: np.ndarray, target_side: int) -> np.ndarray:
    """
    u8 stack → (count, target_side, target_side) float64 in [0, 1].

    RGB goes to luminance first; resizing is bilinear with corner pixel
    centers aligned.
    """
    side_exponent(target_side)
    images = to_luminance(stack) / 255.0
    if images.shape[1:] != (target_side, target_side):
        with torch.no_grad():
            resized = F.interpolate(
                torch.from_numpy(np.ascontiguousarray(images)).unsqueeze(1),
                size=(target_side, target_side),
                mode="bilinear",
                align_corners=True,
            )
        images = resized.squeeze(1).numpy()
    return np.clip(images, 0.0, 1.0)


def synthetic_images(count: int, side: int, seed: int, blobs: int = 4) -> np.ndarray:
    """Seeded smooth images: a few Gaussian blobs on a dark background, peak-normalized."""
    rng = np.random.default_rng(seed)
    grid = (np.arange(side) + 0.5) / side
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    out = np.empty((count, side, side))
    for i in range(count):
        image = np.zeros((side, side))
        for _ in range(blobs):
            cy, cx = rng.uniform(0.15, 0.85, size=2)
            width = rng.uniform(0.06, 0.2)
            amplitude = rng.uniform(0.3, 1.0)
            image += amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        out[i] = image / image.max()
    return out


# ═══════════════════════════════════════════
# SPLITS
# ═══════════════════════════════════════════

def split_indices(available: int, counts: Tuple[int, int, int], seed: int) -> List[np.ndarray]:
    """Seeded permutation of range(available), sliced contiguously into the three splits."""
    if any(c < 0 for c in counts):
        raise DataError(f"split counts must be non-negative, got {counts}")
    needed = sum(counts)
    if needed > available:
        raise DataError(f"split needs {needed} images, only {available} available")
    order = np.random.default_rng(seed).permutation(available)
    bounds = np.cumsum((0,) + tuple(counts))
    return [order[bounds[i]:bounds[i + 1]] for i in range(3)]


def split_dataset(
    images: Union[np.ndarray, Sequence[ImageTensor]],
    counts: Tuple[int, int, int],
    seed: int,
    name: str = "",
) -> Dataset:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise DimensionError(f"expected a stack of square images, got {images.shape}")
    train, val, test = split_indices(len(images), counts, seed)
    return Dataset(
        name=name,
        side=images.shape[1],
        train=images[train],
        val=images[val],
        test=images[test],
        split_seed=seed,
    )


def _raw_stacks(spec: DatasetSpec) -> List[np.ndarray]:
    stacks = []
    for path in spec.resolved_paths():
        try:
            stacks.append(read_idx(path) if spec.name == "mnist" else read_stl10(path))
        except OSError as exc:
            raise DataError(f"cannot read {sanitize_log_string(str(path))}: {exc}") from exc
    return stacks


def load_dataset(spec: DatasetSpec) -> Dataset:
    """Load, select and preprocess only the images the splits use."""
    if spec.name == "synthetic":
        images = synthetic_images(sum(spec.counts), spec.side, spec.split_seed)
        return split_dataset(images, spec.counts, spec.split_seed, name=spec.name)

    stacks = _raw_stacks(spec)
    sizes = [len(s) for s in stacks]
    offsets = np.cumsum([0] + sizes)
    splits = split_indices(int(offsets[-1]), spec.counts, spec.split_seed)

    def gather(indices: np.ndarray) -> np.ndarray:
        if len(indices) == 0:
            return np.empty((0, spec.side, spec.side))
        which = np.searchsorted(offsets, indices, side="right") - 1
        raw = np.stack([stacks[f][i - offsets[f]] for f, i in zip(which, indices)])
        return preprocess(raw, spec.side)

    train, val, test = (gather(idx) for idx in splits)
    logger.info(
        f"Loaded {spec.name}: {len(train)}/{len(val)}/{len(test)} images at "
        f"{spec.side}×{spec.side} from {sum(sizes)} available"
    )
    return Dataset(name=spec.name, side=spec.side, train=train, val=val, test=test, split_seed=spec.split_seed)
