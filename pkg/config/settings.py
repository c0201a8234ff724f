"""
Process settings, with overrides loaded from a .env file.
"""

import os
from dotenv import load_dotenv

# Load .env from project root
load_dotenv()

# ─────────────────────────────────────────────
# Logging
# ─────────────────────────────────────────────
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_DIR = os.getenv("SPI_LOG_DIR", "logs")

# ─────────────────────────────────────────────
# Runs
# ─────────────────────────────────────────────
OUTPUT_DIR = os.getenv("SPI_OUTPUT_DIR", "outputs")
WORKERS = int(os.getenv("SPI_WORKERS", "1"))
GLOBAL_SEED = int(os.getenv("SPI_SEED", "0"))
TORCH_THREADS = int(os.getenv("SPI_TORCH_THREADS", "0"))  # 0 = torch default

# ─────────────────────────────────────────────
# Acceptance data (slow tests only)
# ─────────────────────────────────────────────
MNIST_DIR = os.getenv("SPI_MNIST_DIR", "")
STL10_DIR = os.getenv("SPI_STL10_DIR", "")

# ─────────────────────────────────────────────
# Numerical defaults
# ─────────────────────────────────────────────
DEBUG = os.getenv("DEBUG", "false").lower() == "true"
MAX_HADAMARD_ORDER = 12           # 2^12 = 4096
MAX_DENSE_SIDE = 64               # dense A only up to 4096 x 4096
MC_CHUNK_SIZE = 64                # dropout samples per forward batch
