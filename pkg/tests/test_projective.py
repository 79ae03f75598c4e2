"""Tests for the projective action and walks."""

import math

import numpy as np
import pytest

from rmldp.exceptions import DegenerateActionError
from rmldp.models import SphereChart, SphereDirection
from rmldp.projective import (
    act,
    angular_distance,
    canonical_coords,
    canonicalize,
    hilbert_distance,
    product_log_norm,
    walk,
)


def test_canonical_coords_full_sphere():
    """The first nonzero coordinate is made positive."""
    assert np.allclose(canonical_coords(np.array([-3.0, 4.0])), [0.6, -0.8])
    assert np.allclose(canonical_coords(np.array([0.0, -2.0])), [0.0, 1.0])


def test_canonical_coords_quadrant_and_line():
    assert np.allclose(canonical_coords(np.array([-3.0, 4.0]), SphereChart.POSITIVE_QUADRANT), [0.6, 0.8])
    assert np.allclose(canonical_coords(np.array([-2.0])), [-1.0])


def test_canonicalize_rejects_zero():
    with pytest.raises(DegenerateActionError):
        canonicalize(np.zeros(2))


def test_direction_must_be_unit():
    with pytest.raises(ValueError):
        SphereDirection(coords=[1.0, 1.0])


def test_act_returns_log_gain():
    x = canonicalize(np.array([1.0, 0.0]))
    image, increment = act(np.array([[3.0, 0.0], [4.0, 1.0]]), x)
    assert increment == pytest.approx(math.log(5.0))
    assert np.allclose(image.coords, [0.6, 0.8])


def test_act_degenerate():
    x = canonicalize(np.array([1.0, 0.0]))
    with pytest.raises(DegenerateActionError):
        act(np.array([[0.0, 1.0], [0.0, 1.0]]), x)


def test_angular_distance():
    e1 = canonicalize(np.array([1.0, 0.0]))
    e2 = canonicalize(np.array([0.0, 1.0]))
    diagonal = canonicalize(np.array([1.0, 1.0]))
    assert angular_distance(e1, e1) == pytest.approx(0.0, abs=1e-15)
    assert angular_distance(e1, e2) == pytest.approx(1.0)
    assert angular_distance(e1, diagonal) == pytest.approx(math.sqrt(0.5))
    assert angular_distance(e2, diagonal) == pytest.approx(angular_distance(diagonal, e2))


def test_hilbert_distance_contracts(positive_law):
    """Positive matrices are strict contractions of the Hilbert distance."""
    chart = SphereChart.POSITIVE_QUADRANT
    x = canonicalize(np.array([1.0, 0.2]), chart)
    y = canonicalize(np.array([0.3, 1.0]), chart)
    for g in np.asarray(positive_law.atoms):
        gx = canonicalize(g @ x.coords, chart)
        gy = canonicalize(g @ y.coords, chart)
        assert hilbert_distance(gx, gy) < hilbert_distance(x, y)
    assert hilbert_distance(x, x) == pytest.approx(0.0, abs=1e-15)


def test_walk_matches_matrix_product(positive_law, quadrant_start):
    """The running log-gain equals log|G_n x| computed from the product."""
    path = walk(positive_law, quadrant_start, 200, np.random.default_rng(3))
    assert path.directions.shape == (200, 2)
    direct = product_log_norm(positive_law, quadrant_start, np.asarray(path.atom_indices))
    assert path.loggains[-1] == pytest.approx(direct, rel=1e-12)


def test_walk_replays_indices(rotation_law):
    x = canonicalize(np.array([1.0, 0.0]))
    indices = np.array([0, 1, 1, 0, 1])
    first = walk(rotation_law, x, 5, np.random.default_rng(0), indices=indices)
    second = walk(rotation_law, x, 5, np.random.default_rng(99), indices=indices)
    assert np.array_equal(first.loggains, second.loggains)
    assert first.atom_indices == [0, 1, 1, 0, 1]


def test_walk_needs_a_step(positive_law, quadrant_start):
    with pytest.raises(ValueError):
        walk(positive_law, quadrant_start, 0, np.random.default_rng(0))


def test_walk_rejects_short_replay(positive_law, quadrant_start):
    with pytest.raises(ValueError, match="replay holds 3"):
        walk(positive_law, quadrant_start, 5, np.random.default_rng(0), indices=np.array([0, 1, 0]))
