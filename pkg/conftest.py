"""
Pytest configuration for the SPI BCNN toolkit.

Fast unit tests run by default. Desk-scale acceptance runs are marked `slow`
and only run when the dataset directories are configured (SPI_MNIST_DIR /
SPI_STL10_DIR).
"""

import gzip
import json
import struct
from pathlib import Path

import numpy as np
import pytest
import torch

from bcnn import init_network
from models import Likelihood, NetworkConfig
from patterns import build_measurement_matrix

REPO_ROOT = Path(__file__).resolve().parent

# Reference material shipped next to the package is not part of the suite.
collect_ignore = ["examples"]


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance run (needs real datasets)")


# ─── Randomness ───

@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ─── Sensing ───

@pytest.fixture(scope="session")
def matrix_32_128():
    """n=32, m=128 (8X) measurement matrix."""
    return build_measurement_matrix(32, 128)


# ─── Networks ───

@pytest.fixture
def tiny_network():
    """Factory for the reduced network (side 8, one level, base width 4)."""

    def make(likelihood=Likelihood.BERNOULLI, dtype=torch.float32, seed=0, **overrides):
        cfg = NetworkConfig(levels=1, base_channels=4, likelihood=likelihood, **overrides)
        return init_network(cfg, 8, seed).to(dtype)

    return make


# ─── Dataset bytes ───

def idx_bytes(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    return struct.pack(">IIII", 0x00000803, count, rows, cols) + images.tobytes()


@pytest.fixture
def idx_file(tmp_path, rng):
    """Gzipped IDX file of 20 random 28×28 images; returns (path, images)."""
    images = rng.integers(0, 256, size=(20, 28, 28), dtype=np.uint8)
    path = tmp_path / "train-images-idx3-ubyte.gz"
    with gzip.open(path, "wb") as fh:
        fh.write(idx_bytes(images))
    return path, images


# ─── Experiment configs ───

@pytest.fixture
def smoke_config(tmp_path):
    """configs/smoke.json as a dict, writing into tmp_path."""
    data = json.loads((REPO_ROOT / "configs" / "smoke.json").read_text(encoding="utf-8"))
    data["output"]["directory"] = str(tmp_path / "out")
    return data


@pytest.fixture
def write_config(tmp_path):
    def write(data: dict, name: str = "experiment.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return write
