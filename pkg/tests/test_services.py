"""Integration tests for the experiment pipeline and the verification suites."""

import math

import pytest

from rmldp.exceptions import ConfigError, StageError
from rmldp.models import (
    AcceptanceCheck,
    CheckStatus,
    EstimateRecord,
    ExperimentConfig,
    Prediction,
    PredictionFactors,
    Theorem,
)
from rmldp.services import ExperimentService, VerificationService
from rmldp.services.experiment import Case, compare_pair, evaluate_check

pytestmark = pytest.mark.integration


def _record(value: float, n: int = 10) -> EstimateRecord:
    log_value = math.log(value) if value > 0 else -math.inf
    return EstimateRecord(
        method="crude", n=n, value=value, log_value=log_value, std_error=0.1 * value,
        n_samples=1000, ci95=(0.8 * value, 1.2 * value),
    )


def _prediction(value: float, n: int = 10) -> Prediction:
    factors = PredictionFactors(rbar=1.0, exp_rate=value, log_exp_rate=math.log(value), gauss=1.0)
    return Prediction(theorem="upper_tail", s=1.0, n=n, value=value, log_value=math.log(value), factors=factors)


def _rows(ratios_by_n):
    cases, rows = [], []
    for n, ratio in ratios_by_n:
        case = Case(Theorem.UPPER_TAIL, 1.0, n, 0.0, 0)
        cases.append(case)
        rows.append(compare_pair(case, _record(0.1 * ratio, n), _prediction(0.1, n)))
    return cases, rows


@pytest.fixture
def scalar_config(write_config, scalar_law):
    path = write_config(
        scalar_law,
        s_values=[1.0],
        n_values=[50, 100],
        theorems=["upper_tail", "llt"],
        windows={"a": 0.0, "deltas": [1.0]},
        estimator={"method": "exhaustive", "seed": 7},
        n_cheb=24,
        checks=[
            {"name": "tail_n100", "theorem": "upper_tail", "n": 100, "lo": 0.5, "hi": 1.5},
            {"name": "no_target_rows", "theorem": "target"},
        ],
    )
    return ExperimentConfig.load(path)


def test_pipeline_writes_every_table(scalar_config, tmp_path):
    report = ExperimentService(scalar_config).run()
    out = tmp_path / "out"
    for name in ("cumulants.csv", "cumulants.json", "spectral.json", "estimates.csv", "predictions.csv",
                 "comparison.csv", "checks.json"):
        assert (out / name).exists()
    assert list((out / "plotdata").glob("ratio_vs_n_*.csv"))
    assert len(report.rows) == 4
    assert [check.status for check in report.checks] == ["passed", "skipped"]
    assert report.passed


def test_pipeline_is_reproducible(scalar_config, tmp_path):
    ExperimentService(scalar_config, output_dir=tmp_path / "first").run()
    ExperimentService(scalar_config, output_dir=tmp_path / "second").run()
    first = (tmp_path / "first" / "comparison.csv").read_bytes()
    assert first == (tmp_path / "second" / "comparison.csv").read_bytes()


def test_dry_run_writes_nothing(scalar_config, tmp_path):
    report = ExperimentService(scalar_config).run(dry_run=True)
    assert report.rows == []
    assert not (tmp_path / "out").exists()


def test_dry_run_rejects_tilt_outside_range(write_config, scalar_law):
    config = ExperimentConfig.load(write_config(scalar_law, s_values=[5.0], n_values=[10]))
    with pytest.raises(ConfigError):
        ExperimentService(config).run(dry_run=True)


def test_levels_become_tilts(write_config, scalar_law):
    """q = Lambda'(1) for the three-atom law is (1 - sqrt 2) / 3."""
    q = (1.0 - math.sqrt(2.0)) / 3.0
    config = ExperimentConfig.load(write_config(scalar_law, q_values=[q], n_values=[10]))
    assert ExperimentService(config).tilts() == [pytest.approx(1.0, abs=1e-8)]


def test_wrong_sign_tilts_are_skipped(write_config, scalar_law):
    config = ExperimentConfig.load(
        write_config(scalar_law, s_values=[1.0, -0.3], n_values=[10], theorems=["upper_tail", "lower_tail"])
    )
    cases = ExperimentService(config).cases()
    assert [(case.theorem, case.s) for case in cases] == [(Theorem.UPPER_TAIL, 1.0), (Theorem.LOWER_TAIL, -0.3)]


def test_direction_dimension_checked(write_config, positive_law):
    config = ExperimentConfig.load(write_config(positive_law, s_values=[1.0], n_values=[10], directions=[[1.0]]))
    with pytest.raises(ConfigError):
        ExperimentService(config).directions()


def test_broken_ensemble_fails_the_load_stage(tmp_path):
    (tmp_path / "ensemble.json").write_text('{"dim": 1}', encoding="utf-8")
    (tmp_path / "config.json").write_text(
        '{"ensemble": "ensemble.json", "s_values": [1.0], "n_values": [10]}', encoding="utf-8"
    )
    service = ExperimentService(ExperimentConfig.load(tmp_path / "config.json"))
    with pytest.raises(StageError) as excinfo:
        service.run()
    assert excinfo.value.stage == "load"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "absent.json")


def test_invalid_config_fields(tmp_path):
    (tmp_path / "config.json").write_text('{"ensemble": "e.json", "s_values": "one"}', encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid config"):
        ExperimentConfig.load(tmp_path / "config.json")


def test_compare_pair_ratio():
    case = Case(Theorem.UPPER_TAIL, 1.0, 10, 0.0, 0)
    row = compare_pair(case, _record(0.2), _prediction(0.1))
    assert row.ratio == pytest.approx(2.0)
    assert row.rate_gap == pytest.approx(math.log(2.0) / 10)
    assert row.ratio_ci == (pytest.approx(1.6), pytest.approx(2.4))


def test_compare_pair_without_hits():
    case = Case(Theorem.UPPER_TAIL, 1.0, 10, 0.0, 0)
    row = compare_pair(case, _record(0.0), _prediction(0.1))
    assert row.ratio == 0.0
    assert row.rate_gap == -math.inf


def test_ratio_check():
    cases, rows = _rows([(100, 1.05), (200, 0.97)])
    passing = AcceptanceCheck(name="band", theorem="upper_tail", lo=0.9, hi=1.1)
    failing = AcceptanceCheck(name="tight", theorem="upper_tail", n=100, lo=0.99, hi=1.01)
    assert evaluate_check(passing, cases, rows).status == "passed"
    result = evaluate_check(failing, cases, rows)
    assert result.status == "failed"
    assert result.measured == pytest.approx(1.05)


def test_trend_check():
    shrinking = _rows([(100, 1.2), (200, 1.1), (400, 0.98)])
    growing = _rows([(100, 1.02), (200, 1.1)])
    check = AcceptanceCheck(name="trend", theorem="upper_tail", metric="trend", hi=0.01)
    assert evaluate_check(check, *shrinking).status == "passed"
    assert evaluate_check(check, *growing).status == "failed"


def test_check_without_rows_is_skipped():
    check = AcceptanceCheck(name="llt", theorem="llt", lo=0.9, hi=1.1)
    assert evaluate_check(check, *_rows([(100, 1.0)])).status == CheckStatus.SKIPPED


def test_verification_rejects_unknown_suite(positive_law):
    with pytest.raises(ValueError):
        VerificationService(positive_law, suites=["ensemble", "plots"])


def test_verification_positive_law_geometry(positive_law, tmp_path):
    report = VerificationService(positive_law, resolution=128, seed=3, suites=["ensemble", "projective"]).run(tmp_path)
    assert report.results
    assert report.count(CheckStatus.FAILED) == 0
    assert {result.module for result in report.results} == {"ensemble", "projective"}
    assert (tmp_path / "verify.json").exists()


@pytest.mark.slow
def test_verification_scalar_law(scalar_law):
    report = VerificationService(scalar_law, s_values=[1.0, -0.3], seed=11, n_cheb=33).run()
    failed = [result.name for result in report.results if result.status == CheckStatus.FAILED]
    assert failed == []
