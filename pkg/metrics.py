"""
Image-quality and uncertainty-calibration metrics.
"""

import csv
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from skimage.metrics import structural_similarity

from errors import DataError, DegenerateStatisticsError, DimensionError
from models import METRICS_HEADER, EvaluationRow, ImageTensor, PredictionResult

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11        # skimage: 2·int(3.5·σ + 0.5) + 1
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae(a: ImageTensor, b: ImageTensor) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def ssim(a: ImageTensor, b: ImageTensor) -> float:
    """
    Mean of the full local SSIM map: 11×11 Gaussian window (σ=1.5), data range 1,
    population statistics, reflected borders. Border pixels are included in the mean.
    """
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs a 2-D image of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {a.shape}")
    _, local = structural_similarity(
        a, b,
        data_range=1.0,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
        full=True,
    )
    return float(local.mean())


def r_squared(err: np.ndarray, unc: np.ndarray) -> float:
    """Squared Pearson correlation over all pixels."""
    err, unc = _pair(err, unc)
    err, unc = err.ravel(), unc.ravel()
    if np.ptp(err) == 0 or np.ptp(unc) == 0:
        raise DegenerateStatisticsError("correlation undefined for a zero-variance map")
    r = np.corrcoef(err, unc)[0, 1]
    return float(r * r)


def evaluate_testset(
    predictions: Sequence[PredictionResult],
    truths: Sequence[ImageTensor],
    compression: float = 0.0,
    likelihood: str = "",
    pooled_r2: bool = False,
) -> EvaluationRow:
    """
    Per-image MAE / SSIM of μ̂ and R²(|truth − μ̂|, σ̂), aggregated over the set.

    R² is averaged over images (degenerate images skipped) unless pooled_r2,
    which correlates all pixels of the set at once. r2_mean is None when no
    image gives a defined correlation.
    """
    if len(predictions) != len(truths):
        raise DataError(f"{len(predictions)} predictions vs {len(truths)} ground truths")
    if not predictions:
        raise DataError("empty test set")

    maes, ssims, r2s = [], [], []
    errors, uncertainties = [], []
    for pred, truth in zip(predictions, truths):
        truth = np.asarray(truth, dtype=np.float64)
        maes.append(mae(pred.mean, truth))
        ssims.append(ssim(pred.mean, truth))
        abs_err = np.abs(truth - pred.mean)
        errors.append(abs_err)
        uncertainties.append(pred.total)
        try:
            r2s.append(r_squared(abs_err, pred.total))
        except DegenerateStatisticsError:
            pass

    r2_mean: Optional[float]
    if pooled_r2:
        try:
            r2_mean = r_squared(np.stack(errors), np.stack(uncertainties))
        except DegenerateStatisticsError:
            r2_mean = None
    else:
        r2_mean = float(np.mean(r2s)) if r2s else None

    return EvaluationRow(
        compression=compression,
        likelihood=likelihood,
        mae_mean=float(np.mean(maes)),
        mae_std=float(np.std(maes)),
        ssim_mean=float(np.mean(ssims)),
        ssim_std=float(np.std(ssims)),
        r2_mean=r2_mean,
        data_unc_mean=float(np.mean([p.data.mean() for p in predictions])),
        model_unc_mean=float(np.mean([p.model.mean() for p in predictions])),
        count=len(predictions),
        r2_count=len(r2s),
    )


def evaluate_inputs(inputs: Sequence[ImageTensor], truths: Sequence[ImageTensor]) -> dict:
    """MAE / SSIM of the LSQR inputs themselves, the baseline the network must beat."""
    if len(inputs) != len(truths):
        raise DataError(f"{len(inputs)} inputs vs {len(truths)} ground truths")
    maes = [mae(x, t) for x, t in zip(inputs, truths)]
    ssims = [ssim(x, t) for x, t in zip(inputs, truths)]
    return {
        "mae_mean": float(np.mean(maes)),
        "mae_std": float(np.std(maes)),
        "ssim_mean": float(np.mean(ssims)),
        "ssim_std": float(np.std(ssims)),
        "count": len(maes),
    }


def write_metrics_csv(rows: Sequence[EvaluationRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row.csv_row())
    return path
