"""Projective action, metrics on the sphere, and random walk paths."""

import math
from typing import Optional, Tuple, Union

import numpy as np

from .ensemble import sample_many
from .exceptions import DegenerateActionError
from .models import MatrixEnsemble, SphereChart, SphereDirection, WalkPath
from .utils.numerics import CompensatedSum

DEGENERATE_NORM = 1e-300


def canonical_coords(v: np.ndarray, chart: Union[SphereChart, str] = SphereChart.FULL) -> np.ndarray:
    """Unit representative of the projective class of ``v`` (rows for batches).

    On the full sphere (d >= 2) the first nonzero coordinate is made positive,
    on the quadrant coordinates are taken in absolute value.  One-dimensional
    vectors keep their sign: the two points +1 and -1 are both grid nodes.
    """
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / norms
    if SphereChart(chart) == SphereChart.POSITIVE_QUADRANT:
        return np.abs(u)
    if u.shape[-1] == 1:
        return u
    nonzero = np.abs(u) > 1e-15
    first = np.argmax(nonzero, axis=-1)
    lead = np.take_along_axis(u, np.expand_dims(first, -1), axis=-1)
    return np.where(lead < 0, -u, u)


def canonicalize(x: np.ndarray, chart: Union[SphereChart, str] = SphereChart.FULL) -> SphereDirection:
    """SphereDirection for an arbitrary nonzero vector."""
    x = np.asarray(x, dtype=float)
    if not np.linalg.norm(x) > 0:
        raise DegenerateActionError("cannot normalize the zero vector")
    return SphereDirection(coords=canonical_coords(x, chart), chart=chart)


def act(g: np.ndarray, x: SphereDirection) -> Tuple[SphereDirection, float]:
    """g . x = gx / |gx| together with the increment log|gx| (nats)."""
    image = np.asarray(g, dtype=float) @ np.asarray(x.coords)
    norm = float(np.linalg.norm(image))
    if norm <= DEGENERATE_NORM:
        raise DegenerateActionError(f"|gx| = {norm:.3e} is degenerate")
    return SphereDirection(coords=canonical_coords(image, x.chart), chart=x.chart), math.log(norm)


def act_many(atoms: np.ndarray, indices: np.ndarray, states: np.ndarray, chart: Union[SphereChart, str]) -> Tuple[np.ndarray, np.ndarray]:
    """Batched action: row k of ``states`` is moved by ``atoms[indices[k]]``."""
    images = np.einsum("kij,kj->ki", np.asarray(atoms)[indices], states)
    norms = np.linalg.norm(images, axis=1)
    if np.any(norms <= DEGENERATE_NORM):
        raise DegenerateActionError("degenerate action in a batched walk step")
    return canonical_coords(images, chart), np.log(norms)


def angular_distance(x: SphereDirection, y: SphereDirection) -> float:
    """|sin theta(x, y)|, from the component of y orthogonal to x."""
    u = np.asarray(x.coords, dtype=float)
    v = np.asarray(y.coords, dtype=float)
    orthogonal = v - np.dot(u, v) * u
    return float(min(1.0, np.linalg.norm(orthogonal)))


def _cross_ratio_m(x: np.ndarray, y: np.ndarray) -> float:
    support = y > 0
    if np.any(support & (x <= 0)):
        return 0.0
    return float(np.min(x[support] / y[support]))


def hilbert_distance(x: SphereDirection, y: SphereDirection) -> float:
    """Hilbert cross-ratio distance (1 - m m') / (1 + m m') on the quadrant."""
    u = np.asarray(x.coords, dtype=float)
    v = np.asarray(y.coords, dtype=float)
    product = _cross_ratio_m(u, v) * _cross_ratio_m(v, u)
    return float((1.0 - product) / (1.0 + product))


def walk(
    ensemble: MatrixEnsemble,
    x: SphereDirection,
    n: int,
    rng: np.random.Generator,
    indices: Optional[np.ndarray] = None,
) -> WalkPath:
    """Path X_k = G_k . x with G_k = g_k ... g_1 and running log|G_k x|.

    ``indices`` replays a fixed sequence of atoms instead of sampling.
    """
    if n < 1:
        raise ValueError("a walk needs n >= 1")
    atoms = np.asarray(ensemble.atoms, dtype=float)
    if indices is None:
        indices = sample_many(ensemble, rng, n)
    elif len(indices) < n:
        raise ValueError(f"replay holds {len(indices)} atom indices, the walk needs {n}")
    directions = np.empty((n, x.dim))
    loggains = np.empty(n)
    running = CompensatedSum()
    state = x
    for k, index in enumerate(indices[:n]):
        state, increment = act(atoms[index], state)
        directions[k] = state.coords
        loggains[k] = running.add(increment)
    return WalkPath(start=x, directions=directions, loggains=loggains, atom_indices=[int(i) for i in indices[:n]])


def product_log_norm(ensemble: MatrixEnsemble, x: SphereDirection, indices: np.ndarray) -> float:
    """log|G_n x| by multiplying the matrices first, rescaling to avoid overflow."""
    atoms = np.asarray(ensemble.atoms, dtype=float)
    product = np.eye(ensemble.dim)
    log_scale = 0.0
    for index in indices:
        product = atoms[index] @ product
        scale = float(np.max(np.abs(product)))
        product /= scale
        log_scale += math.log(scale)
    return log_scale + math.log(float(np.linalg.norm(product @ np.asarray(x.coords))))
