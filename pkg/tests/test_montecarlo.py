"""Tests for exact enumeration and the Monte Carlo estimators."""

import itertools
import math

import numpy as np
import pytest
from scipy.stats import binom

from rmldp import montecarlo
from rmldp.ensemble import positive_example
from rmldp.config import get_settings
from rmldp.exceptions import EnumerationGuardError, OutOfDomainError, WeightOverflowError
from rmldp.models import Theorem
from rmldp.montecarlo import (
    Functional,
    TiltedKernel,
    constant_functional,
    crude_estimate,
    exhaustive,
    exhaustive_tilted,
    interval_functional,
    lower_tail,
    norm_tail,
    tail_functional,
    tilted_estimate,
    tilted_tail,
    tilted_walk,
)
from rmldp.spectral import build_grid, solve_eigen


@pytest.fixture(scope="module")
def positive_tilt():
    law = positive_example()
    return law, solve_eigen(law, 1.0, build_grid(2, law.chart, 256))


def _scalar_solution(law, s):
    return solve_eigen(law, s, build_grid(1, law.chart, 16))


def test_multinomial_route_matches_brute_force(scalar_law, scalar_start):
    """Counting draws gives the same tail as summing every one of 3^7 paths."""
    n, level = 7, 0.3
    logs = np.log(np.asarray(scalar_law.atoms)[:, 0, 0])
    probs = np.asarray(scalar_law.probs)
    brute = math.fsum(
        float(np.prod(probs[list(path)]))
        for path in itertools.product(range(3), repeat=n)
        if logs[list(path)].sum() >= level
    )
    record = exhaustive(scalar_law, scalar_start, n, tail_functional(level))
    assert record.value == pytest.approx(brute, rel=1e-12)
    assert record.std_error == 0.0
    assert record.n_samples == (n + 1) * (n + 2) // 2


def test_count_routes_match_path_enumeration(scalar_law, scalar_start):
    n = 9
    functional = interval_functional(-1.5, 2.5)
    states, loggains, log_prob, _ = montecarlo._enumerate(scalar_law, scalar_start, n)
    by_paths = math.fsum((np.exp(log_prob) * functional(states, loggains)).tolist())
    assert exhaustive(scalar_law, scalar_start, n, functional).value == pytest.approx(by_paths, rel=1e-12)


def test_binomial_route_matches_scipy(lattice_law, scalar_start):
    """S_n >= 0 exactly when at least 30 of 50 draws are e."""
    record = exhaustive(lattice_law, scalar_start, 50, tail_functional(0.0), theorem=Theorem.UPPER_TAIL)
    assert record.value == pytest.approx(binom.sf(29, 50, 0.5), rel=1e-10)
    assert record.theorem == "upper_tail"


def test_exhaustive_total_mass(positive_law, quadrant_start):
    record = exhaustive(positive_law, quadrant_start, 8, constant_functional())
    assert record.value == pytest.approx(1.0, abs=1e-12)
    assert record.n_samples == 2**8


def test_enumeration_guard(positive_law, quadrant_start):
    with pytest.raises(EnumerationGuardError):
        exhaustive(positive_law, quadrant_start, 30, constant_functional())


def test_tilted_enumeration_is_exact(positive_tilt, quadrant_start):
    """Tilted path probabilities times importance weights give back the original law."""
    law, solution = positive_tilt
    functional = tail_functional(5.0)
    plain = exhaustive(law, quadrant_start, 6, functional)
    tilted = exhaustive_tilted(law, solution, quadrant_start, 6, functional)
    assert tilted.value == pytest.approx(plain.value, rel=1e-11)


def test_node_weights_are_stochastic(positive_tilt):
    law, solution = positive_tilt
    weights = TiltedKernel(law, solution).node_weights()
    assert weights.shape == (solution.grid.size, 2)
    assert np.max(np.abs(weights.sum(axis=1) - 1.0)) <= 1e-7


def test_kernel_cocycle(positive_tilt):
    """q_2(x, g2 g1) = q_1(x, g1) q_1(g1 . x, g2)."""
    law, solution = positive_tilt
    kernel = TiltedKernel(law, solution)
    g1, g2 = np.asarray(law.atoms)
    x = np.array([0.8, 0.6])
    image = g1 @ x
    two_steps = kernel.density(x, g1) * kernel.density(image / np.linalg.norm(image), g2)
    assert kernel.density(x, g2 @ g1, n=2) == pytest.approx(two_steps, rel=1e-12)


def test_tilted_walk_draws_the_tilted_law(scalar_law, scalar_start):
    """At s = 1 the three-atom law tilts to the uniform law."""
    kernel = TiltedKernel(scalar_law, _scalar_solution(scalar_law, 1.0))
    weights, log_total, _, _ = kernel.step(np.array([[1.0]]))
    assert np.allclose(weights, 1.0 / 3.0)
    assert abs(log_total[0]) <= 1e-12
    path = tilted_walk(kernel, scalar_start, 3000, np.random.default_rng(11))
    counts = np.bincount(path.atom_indices, minlength=3) / 3000
    assert np.allclose(counts, 1.0 / 3.0, atol=0.03)
    assert path.loggains.shape == (3000,)


def test_tilted_walk_needs_a_step(scalar_law, scalar_start):
    kernel = TiltedKernel(scalar_law, _scalar_solution(scalar_law, 1.0))
    with pytest.raises(ValueError):
        tilted_walk(kernel, scalar_start, 0, np.random.default_rng(0))


def test_crude_estimate_is_reproducible(positive_law, quadrant_start, small_blocks):
    functional = tail_functional(10 * 0.9)
    first = crude_estimate(positive_law, quadrant_start, 10, functional, 2000, seed=5)
    again = crude_estimate(positive_law, quadrant_start, 10, functional, 2000, seed=5, workers=3)
    assert first.value == again.value
    assert first.seed == 5


def test_tilted_estimate_ignores_worker_count(positive_tilt, quadrant_start, small_blocks):
    law, solution = positive_tilt
    one = tilted_tail(law, solution, quadrant_start, 20, 0.9, 0.0, 3000, seed=17, workers=1)
    four = tilted_tail(law, solution, quadrant_start, 20, 0.9, 0.0, 3000, seed=17, workers=4)
    assert one.log_value == four.log_value
    assert one.std_error == four.std_error


def test_crude_estimate_within_error_bars(positive_law, quadrant_start, small_blocks):
    functional = tail_functional(12 * 0.85)
    exact = exhaustive(positive_law, quadrant_start, 12, functional).value
    record = crude_estimate(positive_law, quadrant_start, 12, functional, 4000, seed=3)
    assert abs(record.value - exact) <= 5 * record.std_error + 1e-12


def test_tilted_estimate_within_error_bars(positive_tilt, quadrant_start, small_blocks):
    law, solution = positive_tilt
    functional = tail_functional(12 * 0.9)
    exact = exhaustive(law, quadrant_start, 12, functional).value
    record = tilted_estimate(TiltedKernel(law, solution), quadrant_start, 12, functional, 4000, seed=9)
    assert exact > 0
    assert abs(record.value - exact) <= 5 * record.std_error
    assert record.method == "tilted"
    assert record.diagnostics["renormalization_max"] < 1e-2


def test_scalar_tilted_tail_matches_counts(scalar_law, scalar_start, small_blocks):
    """The lattice-free scalar tail at n = 40 against the multinomial sum."""
    n, q = 40, (1.0 - math.sqrt(2.0)) / 3.0
    solution = _scalar_solution(scalar_law, 1.0)
    exact = exhaustive(scalar_law, scalar_start, n, tail_functional(n * q)).value
    record = tilted_tail(scalar_law, solution, scalar_start, n, q, 0.0, 4000, seed=21)
    assert abs(record.value - exact) <= 5 * record.std_error
    assert record.diagnostics["drift"] == pytest.approx(q, abs=0.05)


def test_log_weight_spread_guard(scalar_law, scalar_start, monkeypatch):
    """Tilted paths whose log-weights spread past the guard are refused."""
    solution = _scalar_solution(scalar_law, 1.0)
    monkeypatch.setattr(get_settings(), "log_weight_guard", 0.5)
    with pytest.raises(WeightOverflowError, match="guard"):
        tilted_tail(scalar_law, solution, scalar_start, 40, 0.0, 0.0, 1000, seed=3)


def test_lower_tail_needs_negative_tilt(positive_tilt, quadrant_start):
    law, solution = positive_tilt
    with pytest.raises(OutOfDomainError):
        lower_tail(law, solution, quadrant_start, 10, 0.5, 0.0, 100)


def test_negative_functional_rejected(positive_law, quadrant_start):
    negative = Functional(lambda directions, loggains: -np.ones_like(loggains), "minus one")
    with pytest.raises(ValueError):
        crude_estimate(positive_law, quadrant_start, 3, negative, 10, seed=1)


def test_norm_tail_is_bracketed(positive_tilt, small_blocks):
    """|G e_1| <= ||G|| <= sqrt(2) max_i |G e_i| sample by sample."""
    law, solution = positive_tilt
    record = norm_tail(law, solution, 10, 0.85, 0.0, 2000, seed=4)
    assert record.theorem == "norm_tail"
    assert record.diagnostics["envelope_lower_log"] <= record.log_value <= record.diagnostics["envelope_upper_log"]
    assert record.diagnostics["rate"] == pytest.approx(record.log_value / 10)
