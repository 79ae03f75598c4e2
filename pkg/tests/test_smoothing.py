"""Tests for the smoothing density, envelopes and convolutions."""

import math

import numpy as np
import pytest

from rmldp.exceptions import DivergentIntegralError, OutOfDomainError
from rmldp.models import PsiDescriptor, PsiKind
from rmldp.smoothing import (
    build_kernel,
    convolve,
    envelopes,
    integral_convergence,
    piece_transform,
    psi_integral,
    varsigma_hat,
    verify_sandwich,
)

UPPER = PsiDescriptor(kind=PsiKind.UPPER_HALF_LINE, a=0.0)
LOWER = PsiDescriptor(kind=PsiKind.LOWER_HALF_LINE, a=0.0)
INTERVAL = PsiDescriptor(kind=PsiKind.INTERVAL, a=0.0, delta=2.0)
STEPS = PsiDescriptor(kind=PsiKind.STEP_TABLE, table_y=[0.0, 1.0, 2.0], table_v=[1.0, 0.5, 0.5])


@pytest.fixture(scope="module")
def fine_kernel():
    return build_kernel(0.1)


@pytest.fixture(scope="module")
def wide_kernel():
    return build_kernel(0.5)


def test_varsigma_hat_support():
    t = np.array([-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5])
    values = varsigma_hat(t)
    assert values[3] == pytest.approx(math.exp(-1.0))
    assert np.all(values[[0, 1, 5, 6]] == 0.0)
    assert np.all(values[2:5] > 0)


def test_kernel_is_a_probability_density(fine_kernel):
    assert abs(fine_kernel.normalization - 1.0) <= 1e-6
    assert np.all(fine_kernel.rho_unit >= 0)
    assert 0.0 < fine_kernel.tail < 1.0
    assert fine_kernel.c_rho_eps == pytest.approx(fine_kernel.tail / (1.0 - fine_kernel.tail))


def test_transform_has_compact_support(fine_kernel):
    """rho_width has transform 1 at the origin and 0 beyond 1 / width."""
    width = fine_kernel.width
    assert width == pytest.approx(0.01)
    assert fine_kernel.transform(np.array([0.0]))[0] == pytest.approx(1.0)
    beyond = fine_kernel.transform(np.array([1.0, 1.5, 4.0]) / width)
    assert np.all(beyond == 0.0)
    inside = fine_kernel.transform(np.array([0.5, 0.8]) / width)
    assert np.all(inside > 0.0)
    # 1 / epsilon is well inside the support, so the width is epsilon^2
    assert fine_kernel.transform(np.array([1.0 / fine_kernel.epsilon]))[0] > 0.5


def test_tail_shrinks_with_epsilon(fine_kernel, wide_kernel):
    assert fine_kernel.c_rho_eps < wide_kernel.c_rho_eps


def test_epsilon_range():
    for epsilon in (0.0, 1.5):
        with pytest.raises(OutOfDomainError):
            build_kernel(epsilon)


def test_psi_integrals_closed_form():
    assert psi_integral(UPPER, 1.0) == pytest.approx(1.0)
    assert psi_integral(INTERVAL, 1.0) == pytest.approx(1.0 - math.exp(-2.0))
    assert psi_integral(INTERVAL, 0.0) == pytest.approx(2.0)
    assert psi_integral(LOWER, -0.3) == pytest.approx(1.0 / 0.3)
    linear = PsiDescriptor(kind=PsiKind.LINEAR_TABLE, table_y=[0.0, 1.0], table_v=[0.0, 1.0])
    assert psi_integral(linear, 0.0) == pytest.approx(0.5)


def test_untilted_half_line_diverges():
    with pytest.raises(DivergentIntegralError):
        psi_integral(UPPER, 0.0)
    with pytest.raises(DivergentIntegralError):
        psi_integral(LOWER, 0.5)


def test_piece_transform_needs_decay():
    with pytest.raises(DivergentIntegralError):
        piece_transform([(0.0, math.inf, 1.0, 0.0)], np.array([1.0]))


@pytest.mark.parametrize("psi,s", [(UPPER, 1.0), (LOWER, -0.3), (INTERVAL, 0.5)])
def test_envelopes_bracket_the_target(psi, s):
    envelope = envelopes(psi, s, 0.2)
    assert envelope.closed_form
    assert np.all(envelope.minus_values <= envelope.base_values + 1e-12)
    assert np.all(envelope.base_values <= envelope.plus_values + 1e-12)
    assert envelope.minus_integral < psi_integral(psi, s) < envelope.plus_integral


def test_step_table_envelopes_are_sampled():
    envelope = envelopes(STEPS, 0.5, 0.1)
    assert not envelope.closed_form
    assert np.all(envelope.minus_values <= envelope.base_values + 1e-12)
    assert np.all(envelope.base_values <= envelope.plus_values + 1e-12)


@pytest.mark.parametrize("psi,s", [(UPPER, 1.0), (INTERVAL, 0.0)])
def test_sandwich_holds(fine_kernel, psi, s):
    report = verify_sandwich(envelopes(psi, s, 0.1), fine_kernel)
    assert report.max_violation <= 1e-8
    assert report.c_rho_empirical <= report.c_rho + 1e-8


def test_direct_and_fourier_convolutions_agree(wide_kernel):
    pieces = [(0.0, 1.0, 1.0, 0.5)]
    x = np.linspace(-2.0, 3.0, 11)
    direct = convolve(pieces, wide_kernel, x)
    fourier = convolve(pieces, wide_kernel, x, route="fourier")
    assert np.max(np.abs(direct - fourier)) <= 1e-6


def test_convolve_rejects_unknown_route(wide_kernel):
    with pytest.raises(ValueError):
        convolve([(0.0, 1.0, 1.0, 0.0)], wide_kernel, np.array([0.0]), route="spline")


def test_integral_convergence_upper_half_line():
    """int psi^+ = 1 + 2 eps exactly, so extrapolation recovers the target."""
    result = integral_convergence(UPPER, 1.0, [0.2, 0.05, 0.1])
    assert result["target"] == pytest.approx(1.0)
    assert [row["epsilon"] for row in result["rows"]] == [0.05, 0.1, 0.2]
    assert result["rows"][0]["plus"] == pytest.approx(1.1)
    assert result["plus_error"] <= 1e-12
    assert result["minus_error"] <= 0.02


def test_kernel_rows(wide_kernel):
    rows = wide_kernel.to_rows(stride=1024)
    assert set(rows[0]) == {"u", "rho"}
    assert len(rows) == math.ceil(wide_kernel.y_grid.size / 1024)
