"""Tests for the transfer operator and its eigen-objects."""

import math

import numpy as np
import pytest

from rmldp import spectral
from rmldp.ensemble import positive_example, scalar_ensemble
from rmldp.exceptions import ConvergenceError, OutOfDomainError
from rmldp.models import SphereChart
from rmldp.spectral import (
    TransferOperator,
    apply_perturbed,
    apply_transfer,
    build_grid,
    cross_check_rs,
    dominant_eigenvalue,
    solve_eigen,
    solve_with_refinement,
    stationary_pi,
    variance_from_spectrum,
)


def _kappa(law, s):
    values = np.asarray(law.atoms)[:, 0, 0]
    return float(np.sum(np.asarray(law.probs) * np.abs(values) ** s))


@pytest.fixture(scope="module")
def positive_solution():
    law = positive_example()
    grid = build_grid(2, law.chart, 512)
    return law, grid, solve_eigen(law, 1.0, grid)


def test_line_grids():
    """The line has one projective point, seen once on the quadrant and twice on the full sphere."""
    assert build_grid(1, SphereChart.POSITIVE_QUADRANT, 64).size == 1
    full = build_grid(1, SphereChart.FULL, 64)
    assert full.size == 2
    assert full.integrate(np.ones(2)) == pytest.approx(1.0)


def test_grid_weights_are_probabilities():
    for d, chart in [(2, SphereChart.FULL), (2, SphereChart.POSITIVE_QUADRANT), (3, SphereChart.FULL)]:
        grid = build_grid(d, chart, 64)
        assert grid.weights.sum() == pytest.approx(1.0)
        assert np.allclose(np.linalg.norm(grid.nodes, axis=1), 1.0)


def test_grid_rejects_small_resolution():
    with pytest.raises(OutOfDomainError):
        build_grid(2, SphereChart.FULL, 8)


def test_interpolation_reproduces_node_values():
    grid = build_grid(2, SphereChart.FULL, 64)
    values = np.cos(np.arange(grid.size))
    assert np.allclose(grid.interpolate(values, grid.nodes), values)


@pytest.mark.parametrize("s", [-0.3, 0.5, 1.0, 2.5])
def test_scalar_kappa_closed_form(scalar_law, s):
    grid = build_grid(1, scalar_law.chart, 16)
    solution = solve_eigen(scalar_law, s, grid)
    assert solution.kappa == pytest.approx(_kappa(scalar_law, s), rel=1e-13)
    assert solution.residual <= 1e-12


def test_two_atom_kappa_at_one(lattice_law):
    """kappa(1) = (e + e^{-sqrt 2}) / 2."""
    solution = solve_eigen(lattice_law, 1.0, build_grid(1, lattice_law.chart, 16))
    assert solution.kappa == pytest.approx(0.5 * (math.e + math.exp(-math.sqrt(2.0))), rel=1e-13)
    assert solution.kappa == pytest.approx(1.48070, abs=5e-6)


def test_signed_scalar_law_uses_both_points():
    """A negative atom swaps the two points of the line; kappa still sums |a|^s."""
    law = scalar_ensemble([2.0, -0.5], [0.5, 0.5])
    solution = solve_eigen(law, 1.0, build_grid(1, law.chart, 16))
    assert solution.kappa == pytest.approx(1.25, rel=1e-12)
    assert np.allclose(solution.r_s, 1.0)


def test_positive_example_residual(positive_solution):
    _, _, solution = positive_solution
    assert solution.residual <= 1e-8
    assert solution.kappa_dense is not None
    assert solution.kappa == pytest.approx(solution.kappa_dense, rel=1e-8)


def test_normalization(positive_solution):
    """nu_s is a probability vector and nu_s(r_s) = 1."""
    _, _, solution = positive_solution
    assert solution.nu_s.sum() == pytest.approx(1.0)
    assert np.dot(solution.nu_s, solution.r_s) == pytest.approx(1.0)
    assert np.all(solution.r_s > 0)
    assert stationary_pi(solution, np.ones_like(solution.r_s)) == pytest.approx(1.0)


def test_adjoint_shares_the_eigenvalue(positive_solution):
    _, _, solution = positive_solution
    assert solution.kappa_star == pytest.approx(solution.kappa, rel=1e-4)


def test_left_eigenvector_duality(positive_solution):
    law, grid, solution = positive_solution
    phi = np.sin(np.arange(grid.size) / 7.0)
    image = apply_transfer(law, 1.0, grid, phi)
    assert np.dot(solution.nu_s, image) == pytest.approx(solution.kappa * np.dot(solution.nu_s, phi), abs=1e-9)


def test_markov_at_zero(positive_law):
    """P_0 is a Markov operator, so kappa(0) = 1."""
    grid = build_grid(2, positive_law.chart, 128)
    assert solve_eigen(positive_law, 0.0, grid).kappa == pytest.approx(1.0, abs=1e-12)


def test_rejects_tilts_below_eta(positive_law):
    grid = build_grid(2, positive_law.chart, 64)
    with pytest.raises(OutOfDomainError):
        solve_eigen(positive_law, -0.9, grid)


def test_operator_reweights_for_complex_s(positive_law):
    grid = build_grid(2, positive_law.chart, 64)
    operator = TransferOperator(positive_law, grid)
    real = operator.apply(1.0, np.ones(grid.size))
    shifted = operator.apply(1.0 + 0.3j, np.ones(grid.size))
    assert np.iscomplexobj(shifted)
    assert np.all(np.abs(shifted) <= real + 1e-12)


def test_eigenfunction_integral_form(positive_solution):
    _, _, solution = positive_solution
    assert cross_check_rs(solution) <= 5e-3


def test_perturbed_operator_is_stochastic_at_zero(positive_solution):
    law, grid, solution = positive_solution
    image = apply_perturbed(law, 1.0, 0.0, 0.7, grid, np.ones(grid.size), solution)
    assert np.max(np.abs(image - 1.0)) <= 1e-10


@pytest.mark.parametrize("z", [-0.1, -0.05, 0.05, 0.1])
def test_lambda_identity_scalar(scalar_law, z):
    """lambda_{s,z} = e^{-qz} kappa(s+z) / kappa(s) exactly on the line."""
    grid = build_grid(1, scalar_law.chart, 16)
    q = 0.3
    spectrum = dominant_eigenvalue(scalar_law, 1.0, z, q, grid)
    expected = math.exp(-q * z) * _kappa(scalar_law, 1.0 + z) / _kappa(scalar_law, 1.0)
    assert abs(spectrum.lambda_real - expected) <= 1e-6
    assert spectrum.gap == 0.0


@pytest.mark.slow
def test_lambda_identity_matrix(positive_solution):
    law, grid, solution = positive_solution
    q = 0.9
    for z in (-0.1, 0.1):
        spectrum = dominant_eigenvalue(law, 1.0, z, q, grid, solution=solution)
        expected = math.exp(-q * z) * solve_eigen(law, 1.0 + z, grid).kappa / solution.kappa
        assert abs(spectrum.lambda_real - expected) <= 5e-4
        assert 0.0 < spectrum.gap < 1.0


def test_variance_from_spectrum_scalar(scalar_law):
    grid = build_grid(1, scalar_law.chart, 16)
    solution = solve_eigen(scalar_law, 1.0, grid)
    values = np.log(np.asarray(scalar_law.atoms)[:, 0, 0])
    weights = np.asarray(scalar_law.probs) * np.exp(values) / _kappa(scalar_law, 1.0)
    mean = float(np.dot(weights, values))
    variance = float(np.dot(weights, (values - mean) ** 2))
    assert variance_from_spectrum(scalar_law, solution, mean, grid) == pytest.approx(variance, rel=1e-5)


def test_refinement_doubles_resolution(positive_law, mocker):
    """A ConvergenceError triggers one more solve on a grid twice as fine."""
    real = spectral.solve_eigen
    seen = []

    def flaky(ensemble, s, grid):
        seen.append(grid.resolution)
        if len(seen) == 1:
            raise ConvergenceError("not yet", gap=0.999)
        return real(ensemble, s, grid)

    mocker.patch.object(spectral, "solve_eigen", side_effect=flaky)
    solution = solve_with_refinement(positive_law, 1.0, resolution=32, attempts=3)
    assert seen == [32, 64]
    assert solution.grid.resolution == 64


def test_refinement_gives_up(positive_law, mocker):
    mocker.patch.object(spectral, "solve_eigen", side_effect=ConvergenceError("never"))
    with pytest.raises(ConvergenceError):
        solve_with_refinement(positive_law, 1.0, resolution=32, attempts=2)
