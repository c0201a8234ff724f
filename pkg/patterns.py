"""
Hadamard pattern generation for single-pixel sensing.

Sylvester-Hadamard bases, a nested ("Russian-doll-style") ordering of the 2-D
patterns, and measurement matrices built from a prefix of that ordering.

Row i of a measurement matrix is the row-major flattening of the outer product
h_r · h_cᵀ of Hadamard rows (r, c) = ordering[i]. For an n×n image X,

    (A · vec X)_i  = (H X Hᵀ)[r_i, c_i]
    Aᵀ · y         = vec(Hᵀ Z H),  Z[r_i, c_i] = y_i

so both directions run as two n×n matrix products and the m×n² matrix is only
materialized on request.
"""

import csv
from functools import lru_cache
from pathlib import Path
from typing import Union

import numpy as np
from scipy.linalg import hadamard

from config.settings import MAX_HADAMARD_ORDER, MAX_DENSE_SIDE
from errors import SizeError, DimensionError
from models import HadamardMatrix, PatternOrdering
from run_logger import get_logger

logger = get_logger()


def sylvester_hadamard(k: int) -> HadamardMatrix:
    """Return H_{2^k} built as H_2 ⊗ H_{2^(k-1)}, H_1 = [1]."""
    if not 0 <= k <= MAX_HADAMARD_ORDER:
        raise SizeError(f"Hadamard order 2^{k} outside supported range 2^0..2^{MAX_HADAMARD_ORDER}")
    n = 1 << k
    return HadamardMatrix(order=n, entries=hadamard(n, dtype=np.int64))


def sequency(row: np.ndarray) -> int:
    """Number of sign changes along a ±1 row."""
    row = np.asarray(row)
    return int(np.count_nonzero(row[1:] != row[:-1]))


def side_exponent(n: int) -> int:
    """k such that n == 2^k; raises SizeError otherwise."""
    if n < 1 or n & (n - 1):
        raise SizeError(f"image side must be a power of two, got {n}")
    k = n.bit_length() - 1
    if k > MAX_HADAMARD_ORDER:
        raise SizeError(f"image side {n} exceeds 2^{MAX_HADAMARD_ORDER}")
    return k


@lru_cache(maxsize=16)
def russian_doll_order(n: int) -> PatternOrdering:
    """
    Nested ordering of the n² pattern index pairs.

    Level j adds every (r, c) with r and c multiples of n/2^j that is not yet
    listed, so the first 4^j entries are a complete basis of the
    2^j×2^j block-constant images. Within a level, patterns are sorted by
    sequency(r) + sequency(c), ties broken by (sequency(r), r, c).
    """
    k = side_exponent(n)
    seq = tuple(sequency(row) for row in sylvester_hadamard(k).entries)

    order = []
    seen = set()
    for j in range(k + 1):
        step = n >> j
        level = [
            (r, c)
            for r in range(0, n, step)
            for c in range(0, n, step)
            if (r, c) not in seen
        ]
        level.sort(key=lambda rc: (seq[rc[0]] + seq[rc[1]], seq[rc[0]], rc[0], rc[1]))
        order.extend(level)
        seen.update(level)

    return PatternOrdering(image_side=n, order=tuple(order), sequency=seq)


def export_ordering_csv(ordering: PatternOrdering, path: Union[str, Path]) -> Path:
    """Write `index,r,c,sequency_r,sequency_c` lines for audit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "r", "c", "sequency_r", "sequency_c"])
        for index, (r, c) in enumerate(ordering.order):
            writer.writerow([index, r, c, ordering.sequency[r], ordering.sequency[c]])
    logger.info(f"Pattern ordering (n={ordering.image_side}) written to {path}")
    return path


class MeasurementMatrix:
    """First m patterns of the nested ordering, applied matrix-free."""

    def __init__(self, image_side: int, indices: np.ndarray):
        k = side_exponent(image_side)
        self.image_side = image_side
        self.indices = np.asarray(indices, dtype=np.int64).reshape(-1, 2)
        self.rows = self.indices[:, 0]
        self.cols = self.indices[:, 1]
        self._h = sylvester_hadamard(k).entries.astype(np.float64)

    @property
    def m(self) -> int:
        return len(self.indices)

    @property
    def shape(self):
        return self.m, self.image_side ** 2

    @property
    def compression_ratio(self) -> float:
        return self.image_side ** 2 / self.m

    def _as_images(self, x: np.ndarray) -> np.ndarray:
        n = self.image_side
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] == (n, n):
            return x
        if x.shape[-1:] == (n * n,):
            return x.reshape(x.shape[:-1] + (n, n))
        raise DimensionError(f"expected trailing shape ({n}, {n}) or ({n * n},), got {x.shape}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A · x for one image or a batch; returns (..., m)."""
        images = self._as_images(x)
        transform = self._h @ images @ self._h
        return transform[..., self.rows, self.cols]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Aᵀ · y for one vector or a batch; returns (..., n²)."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1:] != (self.m,):
            raise DimensionError(f"expected trailing length {self.m}, got {y.shape}")
        n = self.image_side
        z = np.zeros(y.shape[:-1] + (n, n))
        z[..., self.rows, self.cols] = y
        return (self._h @ z @ self._h).reshape(y.shape[:-1] + (n * n,))

    def dense(self) -> np.ndarray:
        """m × n² matrix of ±1 entries (int8)."""
        if self.image_side > MAX_DENSE_SIDE:
            raise SizeError(f"dense view limited to side <= {MAX_DENSE_SIDE}")
        h = self._h.astype(np.int8)
        outer = np.einsum("ip,iq->ipq", h[self.rows], h[self.cols])
        return outer.reshape(self.m, -1)


def build_measurement_matrix(n: int, m: int) -> MeasurementMatrix:
    """Measurement matrix for the first m patterns; compression ratio n²/m."""
    ordering = russian_doll_order(n)
    if not 1 <= m <= n * n:
        raise SizeError(f"row count must lie in [1, {n * n}], got {m}")
    return MeasurementMatrix(n, np.array(ordering.order[:m]))
