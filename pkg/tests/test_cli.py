"""Tests for the rmldp command line."""

import json

import pytest
from typer.testing import CliRunner

from rmldp.cli import app

runner = CliRunner()


def test_version():
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert "rmldp version 0.1.0" in result.output


def test_config_lists_settings():
    result = runner.invoke(app, ["config"])
    assert result.exit_code == 0
    assert "resolution" in result.output
    assert "n_cheb" in result.output


def test_validate_reports_lattice_span(configs_dir):
    result = runner.invoke(app, ["validate", str(configs_dir / "ensembles" / "scalar_lattice.json")])
    assert result.exit_code == 0
    assert "Lattice span" in result.output


def test_validate_non_lattice_law(configs_dir):
    result = runner.invoke(app, ["validate", str(configs_dir / "ensembles" / "scalar.json")])
    assert result.exit_code == 0
    assert "Lattice span" not in result.output
    assert "Proximal product" in result.output


def test_validate_missing_file(tmp_path):
    result = runner.invoke(app, ["validate", str(tmp_path / "absent.json")])
    assert result.exit_code == 1
    assert "Error" in result.output


def test_dry_run_bundled_config(configs_dir):
    result = runner.invoke(app, ["run", "--config", str(configs_dir / "scalar.json"), "--dry-run"])
    assert result.exit_code == 0
    assert "Config is valid" in result.output


def test_run_missing_config(tmp_path):
    result = runner.invoke(app, ["run", "--config", str(tmp_path / "absent.json")])
    assert result.exit_code == 1
    assert "not found" in result.output


def test_kernel_writes_sandwich(tmp_path):
    out = tmp_path / "kernel"
    result = runner.invoke(app, ["kernel", "-e", "0.2", "-e", "0.1", "--psi", "interval", "--out", str(out)])
    assert result.exit_code == 0
    document = json.loads((out / "sandwich.json").read_text(encoding="utf-8"))
    assert [report["epsilon"] for report in document["reports"]] == [0.2, 0.1]
    assert (out / "kernel_eps0.1.csv").exists()
    assert (out / "envelope_eps0.2.csv").exists()


@pytest.mark.integration
def test_compare_writes_table(write_config, scalar_law, tmp_path):
    config = write_config(
        scalar_law, s_values=[1.0], n_values=[40], estimator={"method": "exhaustive"}, n_cheb=24
    )
    out = tmp_path / "cli"
    result = runner.invoke(app, ["compare", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0
    assert (out / "comparison.csv").exists()
    assert "Estimate / prediction" in result.output


@pytest.mark.integration
def test_run_fails_on_failed_check(write_config, scalar_law):
    config = write_config(
        scalar_law,
        s_values=[1.0],
        n_values=[40],
        estimator={"method": "exhaustive"},
        n_cheb=24,
        checks=[{"name": "impossible", "theorem": "upper_tail", "lo": 10.0, "hi": 20.0}],
    )
    result = runner.invoke(app, ["run", "--config", str(config)])
    assert result.exit_code == 1
    assert "Some acceptance checks failed" in result.output


def test_verify_single_suite(write_config, positive_law, tmp_path):
    config = write_config(positive_law, s_values=[1.0], n_values=[10], resolution=64, estimator={"seed": 1})
    result = runner.invoke(app, ["verify", "--config", str(config), "--suite", "ensemble", "--strict"])
    assert result.exit_code == 0
    assert "failed 0" in result.output
    assert (tmp_path / "out" / "verify.json").exists()
