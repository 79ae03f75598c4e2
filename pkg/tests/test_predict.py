"""Tests for the closed-form predictions."""

import math

import numpy as np
import pytest

from rmldp.cumulant import build_model
from rmldp.ensemble import scalar_ensemble
from rmldp.exceptions import OutOfDomainError
from rmldp.models import PsiDescriptor, PsiKind, SphereChart, SphereDirection
from rmldp.montecarlo import exhaustive, tail_functional
from rmldp.predict import (
    ldp_rate_pred,
    llt_pred,
    lower_tail_pred,
    norm_ldp_pred,
    rbar_at,
    target_pred,
    upper_tail_pred,
)
from rmldp.spectral import build_grid, solve_eigen

START = SphereDirection(coords=[1.0], chart=SphereChart.POSITIVE_QUADRANT)


def _three_atom_law():
    weights = np.array([math.exp(-1.0), 1.0, math.exp(math.sqrt(2.0))])
    return scalar_ensemble([math.e, 1.0, math.exp(-math.sqrt(2.0))], weights / weights.sum())


@pytest.fixture(scope="module")
def scalar_setup():
    law = _three_atom_law()
    grid = build_grid(1, law.chart, 16)
    model = build_model(law, grid, -0.5, 3.0, 48)
    return law, grid, model


@pytest.fixture(scope="module")
def lattice_setup():
    law = scalar_ensemble([math.e, math.exp(-math.sqrt(2.0))], [0.5, 0.5])
    grid = build_grid(1, law.chart, 16)
    return law, grid, build_model(law, grid, -0.5, 3.0, 48)


def test_factors_recombine(scalar_setup):
    law, grid, model = scalar_setup
    solution = solve_eigen(law, 1.0, grid)
    prediction = upper_tail_pred(solution, model, START, 200)
    factors = prediction.factors
    assert prediction.value == pytest.approx(factors.product(), rel=1e-14)
    assert prediction.log_value == pytest.approx(math.log(prediction.value), rel=1e-12)
    assert factors.rbar == pytest.approx(1.0)
    assert factors.psi_integral == pytest.approx(1.0)
    sigma = math.sqrt(model.sigma2(1.0))
    assert factors.gauss == pytest.approx(1.0 / (sigma * math.sqrt(2 * math.pi * 200)))
    assert prediction.inputs["q"] == pytest.approx((1.0 - math.sqrt(2.0)) / 3.0, rel=1e-9)


def test_scalar_rbar_is_one(scalar_setup):
    law, grid, _ = scalar_setup
    assert rbar_at(solve_eigen(law, 2.0, grid), START) == pytest.approx(1.0)


def test_negative_tilt_goes_to_the_lower_tail(scalar_setup):
    law, grid, model = scalar_setup
    solution = solve_eigen(law, -0.3, grid)
    prediction = upper_tail_pred(solution, model, START, 100)
    assert prediction.theorem == "lower_tail"
    assert prediction.factors.psi_integral == pytest.approx(1.0 / 0.3)
    assert prediction.value == pytest.approx(lower_tail_pred(solution, model, START, 100).value)


def test_lower_tail_rejects_positive_tilt(scalar_setup):
    law, grid, model = scalar_setup
    with pytest.raises(OutOfDomainError):
        lower_tail_pred(solve_eigen(law, 1.0, grid), model, START, 100)


def test_zero_tilt_has_no_prediction(scalar_setup):
    law, grid, model = scalar_setup
    with pytest.raises(OutOfDomainError):
        upper_tail_pred(solve_eigen(law, 0.0, grid), model, START, 100)


def test_target_with_half_line_is_the_tail(scalar_setup):
    law, grid, model = scalar_setup
    solution = solve_eigen(law, 1.0, grid)
    tail = upper_tail_pred(solution, model, START, 300, l=0.01)
    psi = PsiDescriptor(kind=PsiKind.UPPER_HALF_LINE, a=0.0)
    for phi in ("one", "r_s", None):
        target = target_pred(solution, model, START, 300, 0.01, phi, psi)
        assert target.value == pytest.approx(tail.value, rel=1e-12)
        assert target.theorem == "target"


def test_llt_windows_add_up(scalar_setup):
    law, grid, model = scalar_setup
    solution = solve_eigen(law, 1.0, grid)
    left = llt_pred(solution, model, START, 400, 0.0, 0.0, 1.0)
    right = llt_pred(solution, model, START, 400, 0.0, 1.0, 1.0)
    whole = llt_pred(solution, model, START, 400, 0.0, 0.0, 2.0)
    assert left.value + right.value == pytest.approx(whole.value, rel=1e-12)
    assert whole.factors.window == pytest.approx(-math.expm1(-2.0))
    assert whole.factors.psi_integral == pytest.approx(whole.factors.window / 1.0)


def test_llt_rejects_empty_window(scalar_setup):
    law, grid, model = scalar_setup
    with pytest.raises(OutOfDomainError):
        llt_pred(solve_eigen(law, 1.0, grid), model, START, 400, 0.0, 0.0, 0.0)


def test_norm_rate_is_minus_the_rate_function(scalar_setup):
    _, _, model = scalar_setup
    prediction = norm_ldp_pred(model, 1.0, 50)
    assert prediction.inputs["rate"] == pytest.approx(ldp_rate_pred(model, 1.0))
    assert ldp_rate_pred(model, 1.0) == pytest.approx(-model.rate_point(1.0).lambda_star)
    assert prediction.theorem == "norm_tail"
    assert norm_ldp_pred(model, -0.3, 50).theorem == "norm_lower_tail"


@pytest.mark.parametrize("n", [500, 2000])
def test_non_lattice_tail_matches_prediction(scalar_setup, n):
    """Exact multinomial tail over prediction stays within ten percent."""
    law, grid, model = scalar_setup
    solution = solve_eigen(law, 1.0, grid)
    q = model.derivative(1.0, 1)
    exact = exhaustive(law, START, n, tail_functional(n * q)).value
    prediction = upper_tail_pred(solution, model, START, n)
    assert 0.9 <= exact / prediction.value <= 1.1


def test_lattice_tail_oscillates(lattice_setup):
    """On a lattice the exact tail over the prediction does not settle."""
    law, grid, model = lattice_setup
    solution = solve_eigen(law, 1.0, grid)
    q = model.derivative(1.0, 1)
    ratios = [
        exhaustive(law, START, n, tail_functional(n * q)).value / upper_tail_pred(solution, model, START, n).value
        for n in range(500, 521)
    ]
    assert max(ratios) / min(ratios) > 1.5
