"""
Experiment runner for the single-pixel imaging BCNN pipeline.

Per grid cell (compression ratio, SNR, likelihood):

    simulate  -> measurements + LSQR inputs for every split (SPI1 containers)
    train     -> one network per cell, checkpoint + history
    predict   -> Monte Carlo dropout on the test split
    evaluate  -> metrics row, LSQR baseline, sample images

Simulation is shared by every likelihood of a (compression, SNR) group.
All randomness is derived from (global seed, cell id, stage name), so cells
can run in any order and on any number of workers.

Usage:
    python runner.py run --config configs/smoke.json --out outputs/smoke
    python runner.py report --out outputs/smoke
"""

import argparse
import csv
import hashlib
import json
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from bcnn import init_network, load_checkpoint, predict_mc, save_checkpoint, train, write_history_csv
from config.experiment import ExperimentConfig, apply_overrides, config_hash, config_to_dict, load_config
from config.settings import TORCH_THREADS
from datasets import load_dataset
from errors import ConfigError, ReportError, SPIError, TrainingError
from metrics import evaluate_inputs, evaluate_testset, write_metrics_csv
from models import EvaluationRow, Likelihood, PredictionResult, SimulatedSet
from patterns import build_measurement_matrix, export_ordering_csv, russian_doll_order
from recon import reconstruct_batch
from run_logger import get_logger, sanitize_log_string
from sensing import read_container, simulate_batch, write_container

logger = get_logger()

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
SAMPLE_KINDS = ("truth", "input", "mean", "error", "total", "data", "model")
BASELINE_HEADER = ["compression", "snr_db", "mae_mean", "mae_std", "ssim_mean", "ssim_std"]
TREND_FIELDS = ["mae_mean", "mae_std", "ssim_mean", "ssim_std", "r2_mean", "data_unc_mean", "model_unc_mean"]
METRICS_TABLE_FIELDS = ["mae_mean", "mae_std", "ssim_mean", "ssim_std", "r2_mean"]

EXIT_OK = 0
EXIT_CELL_FAILED = 1
EXIT_CONFIG = 2


# ═══════════════════════════════════════════
# CELLS & SEEDS
# ═══════════════════════════════════════════

def snr_label(snr_db: Optional[float]) -> str:
    return "inf" if snr_db is None else f"{snr_db:g}"


@dataclass(frozen=True)
class Cell:
    compression: float
    snr_db: Optional[float]
    likelihood: str

    @property
    def group_id(self) -> str:
        return f"{self.compression:g}x_snr-{snr_label(self.snr_db)}"

    @property
    def cell_id(self) -> str:
        return f"{self.group_id}_{self.likelihood}"


def stage_seed(global_seed: int, cell_id: str, stage: str) -> int:
    """63-bit seed from sha256("global|cell|stage"); adding cells never moves existing seeds."""
    digest = hashlib.sha256(f"{global_seed}|{cell_id}|{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2 ** 63 - 1)


def cell_seeds(cfg: ExperimentConfig, cell: Cell) -> Dict[str, int]:
    return {
        "split": cfg.dataset.split_seed,
        **{f"noise_{split}": stage_seed(cfg.seed, cell.group_id, f"noise-{split}") for split in SPLITS},
        "init": stage_seed(cfg.seed, cell.cell_id, "init"),
        "shuffle": stage_seed(cfg.seed, cell.cell_id, "shuffle"),
        "dropout": stage_seed(cfg.seed, cell.cell_id, "dropout"),
        "predict": stage_seed(cfg.seed, cell.cell_id, "predict"),
    }


def parse_cell(text: str) -> Cell:
    """`compression,snr,likelihood`; snr `inf` or `none` means noiseless."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"--cell expects 'compression,snr,likelihood', got '{text}'")
    try:
        compression = float(parts[0])
        snr = None if parts[1].lower() in ("inf", "none") else float(parts[1])
    except ValueError as exc:
        raise ConfigError(f"--cell: {exc}") from exc
    return Cell(compression, snr, parts[2].lower())


def grid(cfg: ExperimentConfig, only: Optional[Cell] = None) -> List[Cell]:
    cells = [
        Cell(ratio, snr, likelihood)
        for ratio in cfg.sensing.compression_ratios
        for snr in cfg.sensing.snr_db
        for likelihood in cfg.network.likelihoods
    ]
    if only is not None:
        if only not in cells:
            raise ConfigError(f"cell {only.cell_id} is not part of the configured grid")
        cells = [only]
    return cells


def _groups(cells: Sequence[Cell]) -> List[Cell]:
    seen, groups = set(), []
    for cell in cells:
        if cell.group_id not in seen:
            seen.add(cell.group_id)
            groups.append(cell)
    return groups


# ═══════════════════════════════════════════
# MANIFEST
# ═══════════════════════════════════════════

def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Manifest:
    """manifest.json in the output directory; every written file is listed with its sha256."""

    def __init__(self, out_dir: Path, cfg: ExperimentConfig):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / "manifest.json"
        previous = json.loads(self.path.read_text(encoding="utf-8")) if self.path.exists() else {}
        digest = config_hash(cfg)
        if previous.get("config_hash") not in (None, digest):
            logger.warning("Config changed since the last run in this directory; starting a new manifest")
            previous = {}
        self.data = {
            "version": MANIFEST_VERSION,
            "config_hash": digest,
            "seed": cfg.seed,
            "grid": {
                "compression_ratios": list(cfg.sensing.compression_ratios),
                "snr_db": list(cfg.sensing.snr_db),
                "likelihoods": list(cfg.network.likelihoods),
            },
            "files": previous.get("files", {}),
            "cells": previous.get("cells", {}),
        }

    @classmethod
    def load(cls, out_dir: Path) -> "Manifest":
        """Reopen an existing manifest without a config (the `report` command)."""
        manifest = cls.__new__(cls)
        manifest.out_dir = Path(out_dir)
        manifest.path = manifest.out_dir / "manifest.json"
        if not manifest.path.exists():
            raise ReportError(f"no manifest at {manifest.path}")
        manifest.data = json.loads(manifest.path.read_text(encoding="utf-8"))
        manifest.data.setdefault("files", {})
        return manifest

    def add_file(self, path: Path) -> str:
        rel = Path(path).relative_to(self.out_dir).as_posix()
        self.data["files"][rel] = sha256_file(path)
        return rel

    def update_cell(self, cell: Cell, **fields):
        record = self.data["cells"].setdefault(cell.cell_id, {
            "compression": cell.compression,
            "snr_db": cell.snr_db,
            "likelihood": cell.likelihood,
            "status": "pending",
            "stages": [],
            "files": [],
        })
        for stage in fields.pop("stages", []):
            if stage not in record["stages"]:
                record["stages"].append(stage)
        for rel in fields.pop("files", []):
            if rel not in record["files"]:
                record["files"].append(rel)
        record.update(fields)

    def save(self) -> Path:
        self.data["updated"] = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True), encoding="utf-8")
        return self.path


# ═══════════════════════════════════════════
# IMAGE ARTIFACTS
# ═══════════════════════════════════════════

def write_pgm16(path: Path, image: np.ndarray) -> Tuple[Path, Path]:
    """16-bit binary PGM spanning [min, max] of the image, plus a JSON sidecar holding that range."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    scaled = np.zeros_like(image) if hi == lo else (image - lo) / (hi - lo)
    pixels = np.round(scaled * 65535).astype(">u2")
    rows, cols = image.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{cols} {rows}\n65535\n".encode("ascii") + pixels.tobytes())
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"min": lo, "max": hi}, sort_keys=True), encoding="utf-8")
    return path, sidecar


def read_pgm16(path: Path) -> np.ndarray:
    """Inverse of write_pgm16 using the sidecar range."""
    raw = Path(path).read_bytes()
    header = raw.split(b"\n", 3)
    cols, rows = (int(v) for v in header[1].split())
    pixels = np.frombuffer(header[3], dtype=">u2").reshape(rows, cols).astype(np.float64)
    bounds = json.loads(Path(path).with_suffix(".json").read_text(encoding="utf-8"))
    return bounds["min"] + pixels / 65535 * (bounds["max"] - bounds["min"])


# ═══════════════════════════════════════════
# STAGES
# ═══════════════════════════════════════════

def group_dir(out_dir: Path, cell: Cell) -> Path:
    return Path(out_dir) / "cells" / cell.group_id


def cell_dir(out_dir: Path, cell: Cell) -> Path:
    return group_dir(out_dir, cell) / cell.likelihood


def stage_patterns(cfg: ExperimentConfig, out_dir: Path) -> List[Path]:
    ordering = russian_doll_order(cfg.dataset.side)
    return [export_ordering_csv(ordering, Path(out_dir) / "patterns" / f"ordering_n{cfg.dataset.side}.csv")]


def stage_simulate(cfg: ExperimentConfig, dataset, cell: Cell, out_dir: Path) -> List[Path]:
    """Measure, add noise and LSQR-reconstruct every split of one (compression, SNR) group."""
    side = cfg.dataset.side
    m = cfg.sensing.measurement_count(side, cell.compression)
    A = build_measurement_matrix(side, m)
    seeds = cell_seeds(cfg, cell)
    written = []
    for split in SPLITS:
        truths = getattr(dataset, split)
        measurements = simulate_batch(truths, A, cell.snr_db, seeds[f"noise_{split}"])
        inputs = reconstruct_batch(A, measurements, cfg.lsqr)
        data = SimulatedSet(side, m, cell.snr_db, truths, measurements, inputs)
        written.append(write_container(group_dir(out_dir, cell) / f"{split}.spi", data))
    logger.info(f"[{cell.group_id}] simulated m={m} ({cell.compression:g}X), snr={snr_label(cell.snr_db)} dB")
    return written


def stage_train(cfg: ExperimentConfig, cell: Cell, out_dir: Path) -> List[Path]:
    seeds = cell_seeds(cfg, cell)
    train_data = read_container(group_dir(out_dir, cell) / "train.spi")
    val_data = read_container(group_dir(out_dir, cell) / "val.spi")

    W0 = init_network(cfg.network.network_config(cell.likelihood), cfg.dataset.side, seeds["init"])
    tcfg = cfg.training.training_config(seeds["shuffle"], seeds["init"], seeds["dropout"])
    W, history = train(
        W0,
        (train_data.reconstructions, train_data.truths),
        (val_data.reconstructions, val_data.truths),
        tcfg,
    )
    target = cell_dir(out_dir, cell)
    written = [write_history_csv(history, target / "history.csv")]
    if cfg.output.checkpoints:
        written.append(save_checkpoint(W, target / "checkpoint.bcnn"))
    logger.info(f"[{cell.cell_id}] trained {tcfg.epochs} epochs ({W.parameter_count()} parameters)")
    return written


def stage_predict(cfg: ExperimentConfig, cell: Cell, out_dir: Path) -> List[Path]:
    """K dropout passes per test image; image i uses predict seed derived with index i."""
    target = cell_dir(out_dir, cell)
    W = load_checkpoint(target / "checkpoint.bcnn")
    test = read_container(group_dir(out_dir, cell) / "test.spi")
    base = cell_seeds(cfg, cell)["predict"]

    stacks = {key: [] for key in ("mean", "total", "data", "model")}
    seeds = []
    for i, x in enumerate(test.reconstructions):
        seed = stage_seed(base, cell.cell_id, f"image-{i}")
        result = predict_mc(W, x, cfg.prediction.k, seed, chunk_size=cfg.prediction.chunk_size)
        for key in stacks:
            stacks[key].append(getattr(result, key))
        seeds.append(seed)

    path = target / "predictions.npz"
    np.savez(path, seeds=np.array(seeds, dtype=np.uint64), k=cfg.prediction.k,
             **{key: np.array(value) for key, value in stacks.items()})
    logger.info(f"[{cell.cell_id}] predicted {len(seeds)} test images with K={cfg.prediction.k}")
    return [path]


def _load_predictions(path: Path, likelihood: str) -> List[PredictionResult]:
    with np.load(path) as saved:
        k = int(saved["k"])
        return [
            PredictionResult(
                k=k,
                seed=int(seed),
                likelihood=Likelihood(likelihood),
                mean=saved["mean"][i],
                total=saved["total"][i],
                data=saved["data"][i],
                model=saved["model"][i],
            )
            for i, seed in enumerate(saved["seeds"])
        ]


def stage_evaluate(cfg: ExperimentConfig, cell: Cell, out_dir: Path) -> Tuple[List[Path], EvaluationRow, dict]:
    target = cell_dir(out_dir, cell)
    test = read_container(group_dir(out_dir, cell) / "test.spi")
    predictions = _load_predictions(target / "predictions.npz", cell.likelihood)
    truths = test.truths.astype(np.float64)

    row = evaluate_testset(predictions, truths, cell.compression, cell.likelihood, cfg.prediction.pooled_r2)
    baseline = evaluate_inputs(test.reconstructions.astype(np.float64), truths)

    written = []
    for i in range(min(cfg.output.samples, len(predictions))):
        pred = predictions[i]
        maps = {
            "truth": truths[i],
            "input": test.reconstructions[i],
            "mean": pred.mean,
            "error": np.abs(truths[i] - pred.mean),
            "total": pred.total,
            "data": pred.data,
            "model": pred.model,
        }
        for kind in SAMPLE_KINDS:
            written.extend(write_pgm16(target / "samples" / f"{i:03d}_{kind}.pgm", maps[kind]))
    r2 = "-" if row.r2_mean is None else f"{row.r2_mean:.4f}"
    logger.info(f"[{cell.cell_id}] MAE={row.mae_mean:.4f} SSIM={row.ssim_mean:.4f} R²={r2}")
    return written, row, baseline


# ═══════════════════════════════════════════
# CELL EXECUTION
# ═══════════════════════════════════════════

_CELL_STAGES = ("train", "predict", "evaluate")


def run_cell(cfg: ExperimentConfig, cell: Cell, out_dir: Path, stages: Sequence[str] = _CELL_STAGES) -> dict:
    """
    Run the per-likelihood stages of one cell. Never raises for stage errors:
    the failure is returned for the manifest so other cells proceed.
    """
    out_dir = Path(out_dir)
    outcome = {"cell": cell, "files": [], "stages": [], "status": "ok", "error": None}
    try:
        for stage in stages:
            if stage == "train":
                outcome["files"] += stage_train(cfg, cell, out_dir)
            elif stage == "predict":
                outcome["files"] += stage_predict(cfg, cell, out_dir)
            elif stage == "evaluate":
                files, row, baseline = stage_evaluate(cfg, cell, out_dir)
                outcome["files"] += files
                outcome["metrics"] = asdict(row)
                outcome["baseline"] = baseline
            outcome["stages"].append(stage)
    except (SPIError, OSError, ValueError, RuntimeError) as exc:
        outcome["status"] = "failed"
        outcome["error"] = f"{type(exc).__name__}: {sanitize_log_string(str(exc))}"
        if isinstance(exc, TrainingError):
            outcome["error"] += f" (epoch {exc.epoch})"
        logger.error(f"[{cell.cell_id}] failed: {outcome['error']}", exc_info=True)
    return outcome


def _init_worker():
    if TORCH_THREADS:
        torch.set_num_threads(TORCH_THREADS)


def _record(manifest: Manifest, cfg: ExperimentConfig, outcome: dict):
    cell = outcome["cell"]
    files = [manifest.add_file(p) for p in outcome["files"]]
    fields = {"status": outcome["status"], "error": outcome["error"], "seeds": cell_seeds(cfg, cell)}
    for key in ("metrics", "baseline"):
        if key in outcome:
            fields[key] = outcome[key]
    manifest.update_cell(cell, files=files, stages=outcome["stages"], **fields)


def execute_cells(
    cfg: ExperimentConfig,
    cells: Sequence[Cell],
    out_dir: Path,
    manifest: Manifest,
    stages: Sequence[str] = _CELL_STAGES,
):
    """Run cells inline or on a spawn-based process pool; results are recorded in grid order."""
    if cfg.workers > 1 and len(cells) > 1:
        context = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=cfg.workers, mp_context=context, initializer=_init_worker) as pool:
            outcomes = list(pool.map(run_cell, [cfg] * len(cells), cells, [out_dir] * len(cells), [stages] * len(cells)))
    else:
        outcomes = [run_cell(cfg, cell, out_dir, stages) for cell in cells]
    for outcome in outcomes:
        _record(manifest, cfg, outcome)


def simulate_groups(cfg: ExperimentConfig, cells: Sequence[Cell], out_dir: Path, manifest: Manifest) -> List[Cell]:
    """Simulate each (compression, SNR) group once; returns the cells whose group succeeded."""
    dataset = load_dataset(cfg.dataset)
    failed_groups = set()
    for group in _groups(cells):
        try:
            files = stage_simulate(cfg, dataset, group, out_dir)
        except (SPIError, OSError) as exc:
            failed_groups.add(group.group_id)
            error = f"{type(exc).__name__}: {sanitize_log_string(str(exc))}"
            logger.error(f"[{group.group_id}] simulation failed: {error}", exc_info=True)
            for cell in cells:
                if cell.group_id == group.group_id:
                    manifest.update_cell(cell, status="failed", error=error, seeds=cell_seeds(cfg, cell))
            continue
        rels = [manifest.add_file(p) for p in files]
        for cell in cells:
            if cell.group_id == group.group_id:
                # fresh inputs supersede any earlier failure of this cell
                manifest.update_cell(
                    cell, files=rels, stages=["simulate"], seeds=cell_seeds(cfg, cell),
                    status="pending", error=None,
                )
    return [cell for cell in cells if cell.group_id not in failed_groups]


def write_metrics_files(manifest: Manifest, cfg: ExperimentConfig) -> List[Path]:
    """metrics_snr-<snr>.csv and baseline_snr-<snr>.csv, rows in grid order."""
    out_dir = manifest.out_dir
    written = []
    for snr in cfg.sensing.snr_db:
        rows, baselines = [], []
        for cell in grid(cfg):
            if cell.snr_db != snr:
                continue
            record = manifest.data["cells"].get(cell.cell_id, {})
            if record.get("status") == "ok" and "metrics" in record:
                rows.append(EvaluationRow(**record["metrics"]))
                if "baseline" in record and all(b[0] != cell.compression for b in baselines):
                    base = record["baseline"]
                    baselines.append([cell.compression] + [base[k] for k in BASELINE_HEADER[2:]])
        if not rows:
            continue
        label = snr_label(snr)
        written.append(write_metrics_csv(rows, out_dir / f"metrics_snr-{label}.csv"))
        path = out_dir / f"baseline_snr-{label}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(BASELINE_HEADER)
            for ratio, *values in baselines:
                writer.writerow([f"{ratio:g}", label] + [repr(float(v)) for v in values])
        written.append(path)
    for path in written:
        manifest.add_file(path)
    return written


def run_pipeline(cfg: ExperimentConfig, only: Optional[Cell] = None) -> Manifest:
    """Full grid: patterns, simulation, per-cell train/predict/evaluate, metrics CSVs, report."""
    out_dir = Path(cfg.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "config.json"
    config_path.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True), encoding="utf-8")

    manifest = Manifest(out_dir, cfg)
    manifest.add_file(config_path)
    for path in stage_patterns(cfg, out_dir):
        manifest.add_file(path)

    cells = grid(cfg, only)
    logger.info(f"Running {len(cells)} cell(s) with {cfg.workers} worker(s) into {out_dir}")
    ready = simulate_groups(cfg, cells, out_dir, manifest)
    manifest.save()
    execute_cells(cfg, ready, out_dir, manifest)
    write_metrics_files(manifest, cfg)
    manifest.save()

    if any(c["status"] == "ok" for c in manifest.data["cells"].values()):
        for path in emit_report(manifest.data, out_dir / "report"):
            manifest.add_file(path)
    manifest.save()
    return manifest


# ═══════════════════════════════════════════
# REPORT
# ═══════════════════════════════════════════

def _write_table(path: Path, header: List[str], rows: List[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _metric_cells(record: Optional[dict]) -> List[str]:
    if not record or record.get("status") != "ok" or "metrics" not in record:
        status = "missing" if not record else record.get("status", "missing")
        return [""] * len(TREND_FIELDS) + [status]
    return [_fmt(record["metrics"][f]) for f in TREND_FIELDS] + ["ok"]


def emit_report(manifest: dict, report_dir: Path) -> List[Path]:
    """
    Pivot manifest metrics into trend tables, per-likelihood and long-form metric tables, an
    uncertainty-dominance table and summary.txt. Missing or failed cells
    appear as explicit gaps.
    """
    cells = manifest.get("cells") or {}
    if not cells:
        raise ReportError("manifest has no cells to report")
    grid_spec = manifest.get("grid") or {}
    ratios = grid_spec.get("compression_ratios") or sorted({c["compression"] for c in cells.values()})
    snrs = grid_spec.get("snr_db") or sorted({c["snr_db"] for c in cells.values()}, key=lambda s: (s is None, s))
    likelihoods = grid_spec.get("likelihoods") or sorted({c["likelihood"] for c in cells.values()})

    def lookup(ratio, snr, likelihood) -> Optional[dict]:
        return cells.get(Cell(ratio, snr, likelihood).cell_id)

    report_dir = Path(report_dir)
    written = []

    if len(ratios) > 1:
        for likelihood in likelihoods:
            for snr in snrs:
                rows = [[f"{r:g}"] + _metric_cells(lookup(r, snr, likelihood)) for r in ratios]
                path = report_dir / f"trend_compression_{likelihood}_snr-{snr_label(snr)}.csv"
                written.append(_write_table(path, ["compression"] + TREND_FIELDS + ["status"], rows))

    if len(snrs) > 1:
        for likelihood in likelihoods:
            for ratio in ratios:
                rows = [[snr_label(s)] + _metric_cells(lookup(ratio, s, likelihood)) for s in snrs]
                path = report_dir / f"trend_snr_{likelihood}_{ratio:g}x.csv"
                written.append(_write_table(path, ["snr_db"] + TREND_FIELDS + ["status"], rows))

    # one row per likelihood, MAE / SSIM / R² per compression ratio
    header = ["snr_db", "likelihood"] + [f"{r:g}X_{m}" for r in ratios for m in ("mae", "ssim", "r2")]
    rows = []
    for snr in snrs:
        for likelihood in likelihoods:
            row = [snr_label(snr), likelihood]
            for ratio in ratios:
                record = lookup(ratio, snr, likelihood)
                metrics = record.get("metrics") if record and record.get("status") == "ok" else None
                row += [_fmt(metrics[k]) if metrics else "" for k in ("mae_mean", "ssim_mean", "r2_mean")]
            rows.append(row)
    written.append(_write_table(report_dir / "likelihood_table.csv", header, rows))

    # long form: one row per (compression, likelihood), metrics as columns
    rows = []
    for ratio in ratios:
        for likelihood in likelihoods:
            for snr in snrs:
                record = lookup(ratio, snr, likelihood)
                metrics = record.get("metrics") if record and record.get("status") == "ok" else None
                status = "ok" if metrics else (record.get("status", "missing") if record else "missing")
                values = [_fmt(metrics[k]) if metrics else "" for k in METRICS_TABLE_FIELDS]
                rows.append([f"{ratio:g}", likelihood, snr_label(snr)] + values + [status])
    written.append(_write_table(
        report_dir / "metrics_table.csv",
        ["compression", "likelihood", "snr_db"] + METRICS_TABLE_FIELDS + ["status"],
        rows,
    ))

    dominance, lines = [], []
    for ratio in ratios:
        for snr in snrs:
            for likelihood in likelihoods:
                cell = Cell(ratio, snr, likelihood)
                record = cells.get(cell.cell_id)
                if not record or record.get("status") != "ok" or "metrics" not in record:
                    status = record.get("status", "missing") if record else "missing"
                    reason = f": {record['error']}" if record and record.get("error") else ""
                    lines.append(f"{cell.cell_id}: {status}{reason}")
                    dominance.append([f"{ratio:g}", snr_label(snr), likelihood, "", "", status])
                    continue
                m = record["metrics"]
                data_unc, model_unc = m["data_unc_mean"], m["model_unc_mean"]
                dominant = "data" if data_unc > model_unc else "model" if model_unc > data_unc else "tie"
                dominance.append([f"{ratio:g}", snr_label(snr), likelihood, _fmt(data_unc), _fmt(model_unc), dominant])
                r2 = "n/a" if m["r2_mean"] is None else f"{m['r2_mean']:.4f}"
                line = (
                    f"{cell.cell_id}: MAE {m['mae_mean']:.4f} ± {m['mae_std']:.4f}, "
                    f"SSIM {m['ssim_mean']:.4f} ± {m['ssim_std']:.4f}, R² {r2}; "
                    f"data {data_unc:.4f} vs model {model_unc:.4f} -> {dominant} uncertainty dominant"
                )
                base = record.get("baseline")
                if base:
                    line += f" (LSQR input MAE {base['mae_mean']:.4f}, SSIM {base['ssim_mean']:.4f})"
                lines.append(line)
    written.append(_write_table(
        report_dir / "dominance.csv",
        ["compression", "snr_db", "likelihood", "data_unc_mean", "model_unc_mean", "dominant"],
        dominance,
    ))

    summary = report_dir / "summary.txt"
    summary.write_text(
        f"config {manifest.get('config_hash', '?')}, seed {manifest.get('seed', '?')}\n" + "\n".join(lines) + "\n",
        encoding="utf-8",
    )
    written.append(summary)
    logger.info(f"Report: {len(written)} files in {report_dir}")
    return written


# ═══════════════════════════════════════════
# CLI
# ═══════════════════════════════════════════

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON")
    common.add_argument("--out", help="output directory (overrides output.directory)")
    common.add_argument("--seed", type=int, help="global seed (overrides seed)")
    common.add_argument("--workers", type=int, help="parallel cells (overrides workers)")
    common.add_argument("--cell", help="restrict to one cell: compression,snr,likelihood")

    parser = argparse.ArgumentParser(description="Single-pixel imaging BCNN experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("gen-patterns", "export the nested Hadamard ordering"),
        ("simulate", "simulate measurements and LSQR inputs"),
        ("train", "train one network per cell"),
        ("predict", "Monte Carlo dropout prediction on the test split"),
        ("evaluate", "metrics, baseline and sample images"),
        ("run", "the full grid, end to end"),
        ("report", "trend tables and summary from manifest.json"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _report_only(args) -> int:
    out_dir = Path(args.out) if args.out else None
    if out_dir is None:
        if not args.config:
            raise ConfigError("report needs --out or --config")
        out_dir = Path(load_config(args.config, check_paths=False).output.directory)
    manifest = Manifest.load(out_dir)
    for path in emit_report(manifest.data, out_dir / "report"):
        manifest.add_file(path)
    manifest.save()
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if TORCH_THREADS:
        torch.set_num_threads(TORCH_THREADS)
    try:
        if args.command == "report":
            return _report_only(args)
        if not args.config:
            raise ConfigError(f"{args.command} needs --config")
        cfg = apply_overrides(load_config(args.config), args.out, args.seed, args.workers)
        only = parse_cell(args.cell) if args.cell else None
        cells = grid(cfg, only)
    except ConfigError as exc:
        logger.error(f"Config error: {sanitize_log_string(str(exc))}")
        return EXIT_CONFIG
    except ReportError as exc:
        logger.error(f"Report error: {sanitize_log_string(str(exc))}")
        return EXIT_CELL_FAILED

    out_dir = Path(cfg.output.directory)
    try:
        if args.command == "run":
            manifest = run_pipeline(cfg, only)
        else:
            manifest = Manifest(out_dir, cfg)
            if args.command == "gen-patterns":
                for path in stage_patterns(cfg, out_dir):
                    manifest.add_file(path)
            elif args.command == "simulate":
                simulate_groups(cfg, cells, out_dir, manifest)
            else:
                execute_cells(cfg, cells, out_dir, manifest, stages=(args.command,))
                if args.command == "evaluate":
                    write_metrics_files(manifest, cfg)
            manifest.save()
    except SPIError as exc:
        logger.error(f"{args.command} failed: {sanitize_log_string(str(exc))}", exc_info=True)
        return EXIT_CELL_FAILED

    failed = [cid for cid, c in manifest.data["cells"].items() if c.get("status") == "failed"]
    if failed:
        logger.warning(f"{len(failed)} cell(s) failed: {', '.join(failed)}")
        return EXIT_CELL_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
