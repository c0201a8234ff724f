"""
Run the desk-scale acceptance presets and check their manifests.

    python -m training.evaluate mnist_desk_16x [--out DIR]
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from config.experiment import ExperimentConfig, apply_overrides, load_config
from config.settings import MNIST_DIR, STL10_DIR
from runner import Cell, run_pipeline
from training.acceptance_data import ACCEPTANCE_RUNS

REPO_ROOT = Path(__file__).resolve().parent.parent
DATASET_DIRS = {"SPI_MNIST_DIR": MNIST_DIR, "SPI_STL10_DIR": STL10_DIR}


def monotone_with_tolerance(values: Sequence[float], increasing: bool, tolerance: float, allowed: int) -> bool:
    """Monotone in the given direction, allowing `allowed` adjacent violations each within `tolerance` relative."""
    violations = 0
    for a, b in zip(values, values[1:]):
        if (b < a) if increasing else (b > a):
            if abs(b - a) > tolerance * abs(a):
                return False
            violations += 1
    return violations <= allowed


def dataset_available(name: str) -> bool:
    return bool(DATASET_DIRS.get(ACCEPTANCE_RUNS[name]["needs"]))


def preset_config(name: str, out: Optional[str] = None) -> ExperimentConfig:
    spec = ACCEPTANCE_RUNS[name]
    cfg = load_config(REPO_ROOT / spec["config"])
    if "epochs" in spec:
        cfg = replace(cfg, training=replace(cfg.training, epochs=spec["epochs"]))
    if "likelihoods" in spec:
        cfg = replace(cfg, network=replace(cfg.network, likelihoods=tuple(spec["likelihoods"])))
    if "snr_db" in spec:
        cfg = replace(cfg, sensing=replace(cfg.sensing, snr_db=tuple(float(s) for s in spec["snr_db"])))
    return apply_overrides(cfg, out=out)


def _metrics(manifest: dict, cell: Cell) -> dict:
    record = manifest["cells"].get(cell.cell_id)
    if not record or record.get("status") != "ok":
        raise AssertionError(f"cell {cell.cell_id} did not complete")
    return record


def check_manifest(name: str, manifest: dict) -> List[str]:
    """Failure messages for one preset; empty when every threshold holds."""
    spec = ACCEPTANCE_RUNS[name]
    grid = manifest["grid"]
    failures = []

    if name == "mnist_desk_16x":
        record = _metrics(manifest, Cell(16.0, 25.0, "bernoulli"))
        m, base = record["metrics"], record["baseline"]
        if m["mae_mean"] > (1 - spec["mae_reduction"]) * base["mae_mean"]:
            failures.append(f"MAE {m['mae_mean']:.4f} not {spec['mae_reduction']:.0%} below input {base['mae_mean']:.4f}")
        if m["ssim_mean"] < base["ssim_mean"] + spec["ssim_gain"]:
            failures.append(f"SSIM {m['ssim_mean']:.4f} not {spec['ssim_gain']} above input {base['ssim_mean']:.4f}")
        if m["r2_mean"] is None or m["r2_mean"] < spec["r2_min"]:
            failures.append(f"R² {m['r2_mean']} below {spec['r2_min']}")

    elif name == "mnist_compression":
        for likelihood in grid["likelihoods"]:
            rows = [_metrics(manifest, Cell(r, 25.0, likelihood))["metrics"] for r in grid["compression_ratios"]]
            mae = [row["mae_mean"] for row in rows]
            ssim = [row["ssim_mean"] for row in rows]
            if not monotone_with_tolerance(mae, True, spec["trend_tolerance"], spec["trend_violations"]):
                failures.append(f"{likelihood}: MAE not non-decreasing in compression {mae}")
            if not monotone_with_tolerance(ssim, False, spec["trend_tolerance"], spec["trend_violations"]):
                failures.append(f"{likelihood}: SSIM not non-increasing in compression {ssim}")
            for ratio, row in zip(grid["compression_ratios"], rows):
                if row["data_unc_mean"] <= row["model_unc_mean"]:
                    failures.append(f"{likelihood} {ratio:g}X: model uncertainty not below data uncertainty")

    elif name == "mnist_noise":
        m = _metrics(manifest, Cell(16.0, 0.0, "bernoulli"))["metrics"]
        if m["mae_mean"] >= spec["mae_max_0db"]:
            failures.append(f"0 dB MAE {m['mae_mean']:.4f} >= {spec['mae_max_0db']}")
        if m["ssim_mean"] <= spec["ssim_min_0db"]:
            failures.append(f"0 dB SSIM {m['ssim_mean']:.4f} <= {spec['ssim_min_0db']}")

    elif name == "stl10_reduced_4x":
        r2 = {lk: _metrics(manifest, Cell(4.0, 25.0, lk))["metrics"]["r2_mean"] for lk in grid["likelihoods"]}
        for likelihood in spec["r2_above_bernoulli"]:
            if r2[likelihood] is None or r2["bernoulli"] is None or r2[likelihood] <= r2["bernoulli"]:
                failures.append(f"R² {likelihood}={r2[likelihood]} not above bernoulli={r2['bernoulli']}")
    return failures


def evaluate(name: str, out: Optional[str] = None) -> bool:
    spec = ACCEPTANCE_RUNS[name]
    if not dataset_available(name):
        print(f"{spec['needs']} is not set; cannot run '{name}'")
        return False

    manifest = run_pipeline(preset_config(name, out)).data
    failures = check_manifest(name, manifest)

    print(f"\n{'='*60}")
    print(f"  ACCEPTANCE {name}: {'PASS' if not failures else 'FAIL'}")
    print(f"{'='*60}")
    for cell_id, record in sorted(manifest["cells"].items()):
        m = record.get("metrics")
        if m:
            print(f"   {cell_id}: MAE {m['mae_mean']:.4f}  SSIM {m['ssim_mean']:.4f}  R² {m['r2_mean']}")
        else:
            print(f"   {cell_id}: {record.get('status')} {record.get('error') or ''}")
    for failure in failures:
        print(f"   ✗ {failure}")
    return not failures


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("preset", choices=sorted(ACCEPTANCE_RUNS))
    parser.add_argument("--out")
    args = parser.parse_args()
    sys.exit(0 if evaluate(args.preset, args.out) else 1)
