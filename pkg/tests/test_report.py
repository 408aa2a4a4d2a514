"""Result files: CSV tables, results.json, report text and the workbook."""
import json
import math

import pytest
from openpyxl import load_workbook

from harness.config import ExperimentConfig
from harness.report import load_results, rebuild_report, write_results
from harness.stats import EnsembleStats, FunctionalEstimate, Verdict


@pytest.fixture
def cfg(tmp_path):
    return ExperimentConfig(name="tiny", model="ou", dt=1e-4, out_dir=str(tmp_path / "tiny"))


@pytest.fixture
def stats():
    out = EnsembleStats()
    out.estimates.append(FunctionalEstimate("F_eps", "fixed_time", 0.1, 0.01, 100, 0, 1e-4, 0.1))
    out.estimates.append(FunctionalEstimate("F2", "first_exit[-1,1]", math.nan, math.nan, 0, 100, 1e-3, 0.1, ("no_paths",)))
    out.verdicts.append(Verdict("ift", "F_eps", "fixed_time", passed=True, statistic=1.01, se=0.02, n_paths=100))
    out.verdicts.append(Verdict("martingale", "F_eps", "fixed_time", passed=False, statistic=5.0, se=1.0, n_paths=100))
    out.residuals.append({"source": "extended", "name": "forward_row", "value": 1e-9, "threshold": 1e-6, "ok": True})
    return out


def test_csv_output_is_byte_stable(cfg, stats, tmp_path):
    first = write_results(tmp_path / "a", cfg, stats)
    second = write_results(tmp_path / "b", cfg, stats)
    for key in ("estimates", "verdicts", "residuals"):
        assert first[key].read_bytes() == second[key].read_bytes()
    lines = first["estimates"].read_text().splitlines()
    assert lines[0] == "functional,rule,estimate,se,n_paths,exit_count,dt,epsilon,flags"
    assert lines[1].startswith("F_eps,fixed_time,0.10000000000000001,")


def test_results_json_replaces_nan(cfg, stats, tmp_path):
    write_results(tmp_path, cfg, stats)
    payload = load_results(tmp_path)
    assert payload["exit_code"] == 1
    assert payload["estimates"][1]["estimate"] is None
    assert payload["config"]["name"] == "tiny"
    assert payload["config_hash"] == cfg.config_hash()
    assert "NaN" not in (tmp_path / "results.json").read_text()


def test_rebuild_report(cfg, stats, tmp_path):
    written = write_results(tmp_path, cfg, stats)
    original = written["report"].read_text()
    written["report"].unlink()
    assert rebuild_report(tmp_path) == original
    assert "FAIL  martingale" in original
    assert "Exit code 1: 1 gated verdict(s) failed" in original


def test_rebuild_report_needs_results(tmp_path):
    with pytest.raises(FileNotFoundError):
        rebuild_report(tmp_path)
    assert load_results(tmp_path) is None


def test_workbook(cfg, stats, tmp_path):
    written = write_results(tmp_path, cfg, stats, xlsx=True)
    wb = load_workbook(written["xlsx"])
    assert wb.sheetnames == ["functionals", "verdicts", "residuals"]
    ws = wb["verdicts"]
    assert ws.cell(3, 4).value == "FAIL"
    assert wb["functionals"].cell(3, 3).value is None


def test_results_json_sorted(cfg, stats, tmp_path):
    write_results(tmp_path, cfg, stats)
    text = (tmp_path / "results.json").read_text()
    assert json.loads(text) == load_results(tmp_path)
    assert text.index('"config"') < text.index('"estimates"')
