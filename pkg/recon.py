"""
LSQR initial-guess reconstruction.

Golub-Kahan bidiagonalization LSQR from a zero start (scipy), driven through a
LinearOperator so the measurement matrix never has to be materialized.
"""

from typing import Callable, List, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsqr

from errors import DimensionError, NumericError, OperatorError
from models import ImageTensor, LsqrOptions, LsqrResult, MeasurementVector, StopReason
from patterns import MeasurementMatrix
from run_logger import get_logger

logger = get_logger()

ADJOINT_TOLERANCE = 1e-10

# scipy istop codes
_STOP_REASONS = {
    0: StopReason.CONVERGED_BTOL,   # b == 0, x = 0 is exact
    1: StopReason.CONVERGED_BTOL,
    2: StopReason.CONVERGED_ATOL,
    3: StopReason.CONDITION_LIMIT,
    4: StopReason.CONVERGED_BTOL,
    5: StopReason.CONVERGED_ATOL,
    6: StopReason.CONDITION_LIMIT,
    7: StopReason.MAX_ITER,
}

Operator = Callable[[np.ndarray], np.ndarray]


def check_adjoint(apply_A: Operator, apply_At: Operator, m: int, n_cols: int, seed: int = 0) -> float:
    """Relative mismatch of ⟨A u, v⟩ and ⟨u, Aᵀ v⟩ for random u, v; raises past tolerance."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n_cols)
    v = rng.standard_normal(m)
    Au = np.asarray(apply_A(u), dtype=np.float64)
    Atv = np.asarray(apply_At(v), dtype=np.float64)
    lhs, rhs = float(Au @ v), float(u @ Atv)
    scale = max(np.linalg.norm(Au) * np.linalg.norm(v), np.finfo(float).tiny)
    mismatch = abs(lhs - rhs) / scale
    if mismatch > ADJOINT_TOLERANCE:
        raise OperatorError(f"operators are not adjoint: relative mismatch {mismatch:.3e}")
    return mismatch


def _values(y: Union[MeasurementVector, np.ndarray]) -> np.ndarray:
    values = y.values if isinstance(y, MeasurementVector) else y
    values = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(values)):
        raise NumericError("measurement vector contains non-finite values")
    return values


def lsqr_solve(
    apply_A: Operator,
    apply_At: Operator,
    y: Union[MeasurementVector, np.ndarray],
    opts: LsqrOptions = LsqrOptions(),
) -> LsqrResult:
    """Minimum-norm least-squares solution of A x = y (double precision)."""
    b = _values(y)
    m = b.size
    n_cols = np.asarray(apply_At(b)).size

    if opts.debug:
        check_adjoint(apply_A, apply_At, m, n_cols)

    operator = LinearOperator(
        shape=(m, n_cols),
        matvec=lambda x: np.asarray(apply_A(np.ravel(x)), dtype=np.float64),
        rmatvec=lambda v: np.asarray(apply_At(np.ravel(v)), dtype=np.float64),
        dtype=np.float64,
    )
    x, istop, itn, *_ = lsqr(
        operator, b,
        atol=opts.atol, btol=opts.btol, conlim=opts.conlim,
        iter_lim=opts.max_iterations,
    )
    if not np.all(np.isfinite(x)):
        raise NumericError("LSQR produced non-finite values")

    residual = float(np.linalg.norm(np.asarray(apply_A(x)) - b))
    reason = _STOP_REASONS[istop]
    logger.debug(f"LSQR stop: {reason.value} after {itn} iterations, residual={residual:.3e}")
    return LsqrResult(solution=x, iterations=int(itn), stop_reason=reason, residual_norm=residual)


def residual_history(
    apply_A: Operator,
    apply_At: Operator,
    y: Union[MeasurementVector, np.ndarray],
    iterations: int,
    opts: LsqrOptions = LsqrOptions(),
) -> List[float]:
    """‖A x_k − y‖ for k = 1..iterations (LSQR is deterministic, so x_k is reproducible)."""
    history = []
    for k in range(1, iterations + 1):
        step_opts = LsqrOptions(max_iterations=k, atol=opts.atol, btol=opts.btol, conlim=opts.conlim)
        history.append(lsqr_solve(apply_A, apply_At, y, step_opts).residual_norm)
    return history


def reconstruct_initial(
    A: MeasurementMatrix,
    y: Union[MeasurementVector, np.ndarray],
    opts: LsqrOptions = LsqrOptions(),
) -> ImageTensor:
    """LSQR solution reshaped row-major to n×n; no clipping or rescaling."""
    b = _values(y)
    if b.size != A.m:
        raise DimensionError(f"measurement length {b.size} does not match matrix rows {A.m}")
    result = lsqr_solve(A.apply, A.adjoint, b, opts)
    return result.solution.reshape(A.image_side, A.image_side)


def reconstruct_batch(A: MeasurementMatrix, measurements: np.ndarray, opts: LsqrOptions = LsqrOptions()) -> np.ndarray:
    measurements = np.asarray(measurements, dtype=np.float64)
    n = A.image_side
    out = np.empty((len(measurements), n, n))
    for i, y in enumerate(measurements):
        out[i] = reconstruct_initial(A, y, opts)
    return out
