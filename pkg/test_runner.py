import copy
import hashlib
import json

import numpy as np
import pytest

from config.experiment import parse_config
from errors import ConfigError, ReportError
from runner import (
    EXIT_CELL_FAILED,
    EXIT_CONFIG,
    EXIT_OK,
    SAMPLE_KINDS,
    TREND_FIELDS,
    Cell,
    cell_seeds,
    emit_report,
    grid,
    main,
    parse_cell,
    read_pgm16,
    sha256_file,
    stage_seed,
    write_pgm16,
)

CELL_DIR = "cells/8x_snr-25"


def _run(write_config, data, out, *extra):
    path = write_config(data, name=f"{out.name}.json")
    return main(["run", "--config", str(path), "--out", str(out), *extra])


def _manifest(out):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


def _metrics(mae=0.1, ssim=0.8, r2=0.3, data_unc=0.02, model_unc=0.01):
    return {
        "compression": 0.0, "likelihood": "", "mae_mean": mae, "mae_std": 0.01,
        "ssim_mean": ssim, "ssim_std": 0.02, "r2_mean": r2,
        "data_unc_mean": data_unc, "model_unc_mean": model_unc, "count": 10, "r2_count": 10,
    }


def _report_manifest(ratios, snrs, likelihoods, skip=(), fail=()):
    cells = {}
    for ratio in ratios:
        for snr in snrs:
            for likelihood in likelihoods:
                cell = Cell(ratio, snr, likelihood)
                if cell.cell_id in skip:
                    continue
                record = {"compression": ratio, "snr_db": snr, "likelihood": likelihood}
                if cell.cell_id in fail:
                    record.update(status="failed", error="TrainingError: loss is nan")
                else:
                    record.update(status="ok", metrics=_metrics(mae=ratio / 1000))
                cells[cell.cell_id] = record
    return {
        "config_hash": "abc",
        "seed": 0,
        "grid": {"compression_ratios": ratios, "snr_db": snrs, "likelihoods": likelihoods},
        "cells": cells,
    }


def _csv_rows(path):
    return path.read_text(encoding="utf-8").strip().split("\n")


# ═══ cells & seeds ═══

def test_stage_seed_is_a_masked_sha256():
    digest = hashlib.sha256(b"3|8x_snr-25_bernoulli|init").digest()
    expected = int.from_bytes(digest[:8], "little") & (2 ** 63 - 1)
    assert stage_seed(3, "8x_snr-25_bernoulli", "init") == expected
    assert stage_seed(3, "8x_snr-25_bernoulli", "init") != stage_seed(3, "8x_snr-25_bernoulli", "shuffle")
    assert stage_seed(3, "8x_snr-25_bernoulli", "init") != stage_seed(4, "8x_snr-25_bernoulli", "init")


def test_cell_ids():
    assert Cell(8.0, 25.0, "bernoulli").cell_id == "8x_snr-25_bernoulli"
    assert Cell(16.0, None, "laplacian").group_id == "16x_snr-inf"
    assert Cell(2.5, 0.0, "gaussian").cell_id == "2.5x_snr-0_gaussian"


def test_parse_cell():
    assert parse_cell("8, 25, Bernoulli") == Cell(8.0, 25.0, "bernoulli")
    assert parse_cell("16,inf,laplacian").snr_db is None
    assert parse_cell("16,none,laplacian").snr_db is None
    for bad in ("8,25", "x,25,bernoulli", "8,loud,bernoulli"):
        with pytest.raises(ConfigError):
            parse_cell(bad)


def test_grid_and_cell_restriction(smoke_config):
    smoke_config["sensing"]["compression_ratios"] = [8, 16]
    smoke_config["network"]["likelihoods"] = ["bernoulli", "laplacian"]
    cfg = parse_config(smoke_config)
    cells = grid(cfg)
    assert [c.cell_id for c in cells] == [
        "8x_snr-25_bernoulli", "8x_snr-25_laplacian", "16x_snr-25_bernoulli", "16x_snr-25_laplacian",
    ]
    assert grid(cfg, Cell(16.0, 25.0, "laplacian")) == [Cell(16.0, 25.0, "laplacian")]
    with pytest.raises(ConfigError):
        grid(cfg, Cell(32.0, 25.0, "laplacian"))


def test_likelihoods_of_a_group_share_noise_seeds(smoke_config):
    cfg = parse_config(smoke_config)
    a = cell_seeds(cfg, Cell(8.0, 25.0, "bernoulli"))
    b = cell_seeds(cfg, Cell(8.0, 25.0, "laplacian"))
    assert a["noise_test"] == b["noise_test"]
    assert a["init"] != b["init"]
    assert len({a["noise_train"], a["noise_val"], a["noise_test"]}) == 3


# ═══ images ═══

def test_pgm16_keeps_the_range(tmp_path, rng):
    image = rng.uniform(-0.2, 1.3, size=(8, 12))
    pgm, sidecar = write_pgm16(tmp_path / "img.pgm", image)
    assert pgm.read_bytes().startswith(b"P5\n12 8\n65535\n")
    assert json.loads(sidecar.read_text()) == {"min": image.min(), "max": image.max()}
    assert np.allclose(read_pgm16(pgm), image, atol=1.5 / 65535 * np.ptp(image))


def test_pgm16_constant_image(tmp_path):
    pgm, _ = write_pgm16(tmp_path / "flat.pgm", np.full((4, 4), 0.25))
    assert np.all(read_pgm16(pgm) == 0.25)


# ═══ report ═══

def test_report_compression_sweep(tmp_path):
    manifest = _report_manifest([8.0, 16.0, 32.0, 64.0], [25.0], ["laplacian", "gaussian", "bernoulli"])
    written = emit_report(manifest, tmp_path)
    trends = sorted(p.name for p in written if p.name.startswith("trend_"))
    assert trends == [
        "trend_compression_bernoulli_snr-25.csv",
        "trend_compression_gaussian_snr-25.csv",
        "trend_compression_laplacian_snr-25.csv",
    ]
    for name in trends:
        rows = _csv_rows(tmp_path / name)
        assert rows[0].split(",") == ["compression"] + TREND_FIELDS + ["status"]
        assert len(rows) == 5
        assert [r.split(",")[0] for r in rows[1:]] == ["8", "16", "32", "64"]
    table = _csv_rows(tmp_path / "likelihood_table.csv")
    assert len(table) == 4
    assert table[0].split(",")[2:5] == ["8X_mae", "8X_ssim", "8X_r2"]


def test_report_noise_sweep(tmp_path):
    snrs = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0]
    written = emit_report(_report_manifest([16.0], snrs, ["laplacian", "gaussian", "bernoulli"]), tmp_path)
    trends = [p for p in written if p.name.startswith("trend_")]
    assert len(trends) == 3
    rows = _csv_rows(tmp_path / "trend_snr_gaussian_16x.csv")
    assert [r.split(",")[0] for r in rows[1:]] == ["0", "5", "10", "15", "20", "25"]


def test_report_marks_gaps(tmp_path):
    manifest = _report_manifest(
        [8.0, 16.0], [25.0], ["bernoulli"],
        skip={"16x_snr-25_bernoulli"}, fail={"8x_snr-25_bernoulli"},
    )
    emit_report(manifest, tmp_path)
    rows = _csv_rows(tmp_path / "trend_compression_bernoulli_snr-25.csv")
    assert rows[1].split(",")[-1] == "failed"
    assert rows[2].split(",")[-1] == "missing"
    summary = (tmp_path / "summary.txt").read_text(encoding="utf-8")
    assert "8x_snr-25_bernoulli: failed: TrainingError" in summary
    assert "16x_snr-25_bernoulli: missing" in summary


def test_report_dominance(tmp_path):
    manifest = _report_manifest([8.0], [25.0], ["laplacian"])
    manifest["cells"]["8x_snr-25_laplacian"]["metrics"] = _metrics(data_unc=0.01, model_unc=0.03)
    emit_report(manifest, tmp_path)
    assert _csv_rows(tmp_path / "dominance.csv")[1].split(",")[-1] == "model"
    assert "model uncertainty dominant" in (tmp_path / "summary.txt").read_text(encoding="utf-8")


def test_report_needs_cells(tmp_path):
    with pytest.raises(ReportError):
        emit_report({"cells": {}}, tmp_path)


def test_metrics_table_has_a_row_per_compression_and_likelihood(tmp_path):
    manifest = _report_manifest(
        [8.0, 16.0], [25.0], ["laplacian", "bernoulli"], fail={"16x_snr-25_bernoulli"},
    )
    emit_report(manifest, tmp_path)
    rows = [r.split(",") for r in _csv_rows(tmp_path / "metrics_table.csv")]
    assert rows[0] == ["compression", "likelihood", "snr_db",
                       "mae_mean", "mae_std", "ssim_mean", "ssim_std", "r2_mean", "status"]
    assert [r[:2] for r in rows[1:]] == [
        ["8", "laplacian"], ["8", "bernoulli"], ["16", "laplacian"], ["16", "bernoulli"],
    ]
    assert float(rows[1][3]) == pytest.approx(0.008)
    assert rows[4][3:] == ["", "", "", "", "", "failed"]


# ═══ end to end ═══

def test_smoke_run_writes_a_complete_manifest(smoke_config, write_config, tmp_path):
    out = tmp_path / "run"
    assert _run(write_config, smoke_config, out) == EXIT_OK

    manifest = _manifest(out)
    cell = manifest["cells"]["8x_snr-25_bernoulli"]
    assert cell["status"] == "ok"
    assert cell["stages"] == ["simulate", "train", "predict", "evaluate"]
    assert 0.0 <= cell["metrics"]["mae_mean"] <= 1.0

    expected = {
        "config.json",
        "patterns/ordering_n32.csv",
        "metrics_snr-25.csv",
        "baseline_snr-25.csv",
        "report/likelihood_table.csv",
        "report/metrics_table.csv",
        "report/dominance.csv",
        "report/summary.txt",
    }
    expected |= {f"{CELL_DIR}/{split}.spi" for split in ("train", "val", "test")}
    expected |= {f"{CELL_DIR}/bernoulli/{name}" for name in ("history.csv", "checkpoint.bcnn", "predictions.npz")}
    expected |= {f"{CELL_DIR}/bernoulli/samples/000_{kind}.{ext}" for kind in SAMPLE_KINDS for ext in ("pgm", "json")}
    assert set(manifest["files"]) == expected
    for rel, digest in manifest["files"].items():
        assert sha256_file(out / rel) == digest

    history = _csv_rows(out / CELL_DIR / "bernoulli" / "history.csv")
    assert len(history) == 3
    with np.load(out / CELL_DIR / "bernoulli" / "predictions.npz") as saved:
        assert saved["mean"].shape == (2, 32, 32)
        assert int(saved["k"]) == 4


def test_runs_are_reproducible_across_directories(smoke_config, write_config, tmp_path):
    assert _run(write_config, smoke_config, tmp_path / "a") == EXIT_OK
    assert _run(write_config, smoke_config, tmp_path / "b") == EXIT_OK
    a, b = _manifest(tmp_path / "a"), _manifest(tmp_path / "b")
    assert a["config_hash"] == b["config_hash"]
    # config.json records the output directory
    a["files"].pop("config.json")
    b["files"].pop("config.json")
    assert a["files"] == b["files"]
    assert a["cells"] == b["cells"]


def test_seed_flag_changes_results(smoke_config, write_config, tmp_path):
    assert _run(write_config, smoke_config, tmp_path / "a") == EXIT_OK
    assert _run(write_config, smoke_config, tmp_path / "b", "--seed", "1") == EXIT_OK
    a, b = _manifest(tmp_path / "a"), _manifest(tmp_path / "b")
    assert a["files"][f"{CELL_DIR}/test.spi"] != b["files"][f"{CELL_DIR}/test.spi"]


def test_stage_commands_match_a_full_run(smoke_config, write_config, tmp_path):
    assert _run(write_config, smoke_config, tmp_path / "full") == EXIT_OK
    path = write_config(smoke_config, name="staged.json")
    out = str(tmp_path / "staged")
    for command in ("gen-patterns", "simulate", "train", "predict", "evaluate"):
        assert main([command, "--config", str(path), "--out", out]) == EXIT_OK
    assert main(["report", "--out", out]) == EXIT_OK

    full, staged = _manifest(tmp_path / "full"), _manifest(tmp_path / "staged")
    assert staged["cells"]["8x_snr-25_bernoulli"]["metrics"] == full["cells"]["8x_snr-25_bernoulli"]["metrics"]
    for name in ("predictions.npz", "checkpoint.bcnn"):
        rel = f"{CELL_DIR}/bernoulli/{name}"
        assert staged["files"][rel] == full["files"][rel]
    assert (tmp_path / "staged" / "report" / "likelihood_table.csv").exists()


def test_parallel_cells_match_serial(smoke_config, write_config, tmp_path):
    smoke_config["network"]["likelihoods"] = ["bernoulli", "laplacian"]
    assert _run(write_config, smoke_config, tmp_path / "serial") == EXIT_OK
    assert _run(write_config, smoke_config, tmp_path / "parallel", "--workers", "2") == EXIT_OK
    serial, parallel = _manifest(tmp_path / "serial"), _manifest(tmp_path / "parallel")
    assert serial["config_hash"] == parallel["config_hash"]
    assert serial["cells"] == parallel["cells"]


def test_unknown_config_key_exits_with_config_error(smoke_config, write_config, tmp_path):
    bad = copy.deepcopy(smoke_config)
    bad["training"]["learning_rte"] = 0.01
    assert _run(write_config, bad, tmp_path / "bad") == EXIT_CONFIG
    assert not (tmp_path / "bad" / "manifest.json").exists()


def test_missing_config_flag(tmp_path):
    assert main(["train", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_cell_outside_the_grid(smoke_config, write_config, tmp_path):
    assert _run(write_config, smoke_config, tmp_path / "x", "--cell", "16,25,bernoulli") == EXIT_CONFIG


def test_successful_simulation_clears_an_earlier_failure(smoke_config, write_config, tmp_path):
    path = write_config(smoke_config, name="staged.json")
    out = str(tmp_path / "staged")
    assert main(["train", "--config", str(path), "--out", out]) == EXIT_CELL_FAILED
    assert _manifest(tmp_path / "staged")["cells"]["8x_snr-25_bernoulli"]["status"] == "failed"

    assert main(["simulate", "--config", str(path), "--out", out]) == EXIT_OK
    cell = _manifest(tmp_path / "staged")["cells"]["8x_snr-25_bernoulli"]
    assert cell["status"] == "pending"
    assert cell["error"] is None
    assert main(["train", "--config", str(path), "--out", out]) == EXIT_OK


def test_report_command_records_its_files(smoke_config, write_config, tmp_path):
    out = tmp_path / "run"
    assert _run(write_config, smoke_config, out) == EXIT_OK
    for name in ("summary.txt", "metrics_table.csv"):
        (out / "report" / name).unlink()
    manifest = _manifest(out)
    manifest["files"] = {k: v for k, v in manifest["files"].items() if not k.startswith("report/")}
    (out / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")

    assert main(["report", "--out", str(out)]) == EXIT_OK
    files = _manifest(out)["files"]
    reported = {p.relative_to(out).as_posix() for p in (out / "report").iterdir()}
    assert reported <= set(files)
    for rel in reported:
        assert sha256_file(out / rel) == files[rel]


def test_report_without_manifest(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_CELL_FAILED


def test_non_string_dataset_path_exits_with_config_error(smoke_config, write_config, tmp_path):
    smoke_config["dataset"]["paths"] = [3]
    assert _run(write_config, smoke_config, tmp_path / "bad") == EXIT_CONFIG
