"""Transfer operators on a discretized sphere and their spectra.

Functions on the sphere are stored as values at grid nodes.  The image
g . x_j of a node is generally off-grid; it is located on the grid and the
value there is obtained by interpolation, so every operator becomes a sparse
node matrix.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc
from tenacity import RetryCallState, Retrying, retry_if_exception_type, stop_after_attempt

from .config import get_settings
from .ensemble import transpose
from .exceptions import ConvergenceError, DegenerateActionError, OutOfDomainError
from .models import MatrixEnsemble, PerturbedSpectrum, SphereChart, SpectralSolution
from .projective import DEGENERATE_NORM, canonical_coords
from .utils.logging import get_logger

logger = get_logger(__name__)

ArrayLike = Union[np.ndarray, list]


@dataclass
class SphereGrid:
    """Quadrature nodes on the sphere (or quadrant) with an interpolation rule."""

    dim: int
    chart: SphereChart
    resolution: int
    nodes: np.ndarray
    weights: np.ndarray
    interp: str
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Neighbour indices and interpolation weights, one row per point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.interp == "sign":
            if self.size == 1:
                idx = np.zeros((points.shape[0], 1), dtype=int)
            else:
                idx = np.where(points[:, :1] >= 0, 0, 1)
            return idx, np.ones(idx.shape)
        if self.interp == "periodic_linear":
            theta = np.mod(np.arctan2(points[:, 1], points[:, 0]), np.pi)
            position = theta * self.resolution / np.pi
            lower = np.floor(position)
            frac = position - lower
            j0 = lower.astype(int) % self.resolution
            j1 = (j0 + 1) % self.resolution
            return np.stack([j0, j1], axis=1), np.stack([1.0 - frac, frac], axis=1)
        if self.interp == "linear":
            theta = np.arctan2(np.abs(points[:, 1]), np.abs(points[:, 0]))
            position = theta * (self.resolution - 1) / (0.5 * np.pi)
            j0 = np.clip(np.floor(position).astype(int), 0, self.resolution - 2)
            frac = np.clip(position - j0, 0.0, 1.0)
            return np.stack([j0, j0 + 1], axis=1), np.stack([1.0 - frac, frac], axis=1)
        return self._locate_nearest(points)

    def _locate_nearest(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        k = self.dim + 1
        if self._tree is None:
            self._tree = cKDTree(self.nodes)
        query = canonical_coords(points, self.chart)
        dist, idx = self._tree.query(query, k=k)
        if self.chart == SphereChart.FULL:
            dist_neg, idx_neg = self._tree.query(-query, k=k)
            dist = np.concatenate([dist, dist_neg], axis=1)
            idx = np.concatenate([idx, idx_neg], axis=1)
            order = np.argsort(dist, axis=1, kind="stable")[:, :k]
            dist = np.take_along_axis(dist, order, axis=1)
            idx = np.take_along_axis(idx, order, axis=1)
        exact = dist[:, 0] < 1e-12
        inverse = 1.0 / np.maximum(dist, 1e-12)
        inverse[exact] = 0.0
        inverse[exact, 0] = 1.0
        return idx, inverse / inverse.sum(axis=1, keepdims=True)

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Values of a node function at arbitrary points."""
        idx, wts = self.locate(points)
        return np.sum(wts * np.asarray(values)[idx], axis=1)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def build_grid(d: int, chart: Union[SphereChart, str], resolution: int) -> SphereGrid:
    """Deterministic node set on the sphere or the positive quadrant.

    d=1 gives the points +1 and -1 (only +1 on the quadrant), d=2 uniform
    projective angles, d>=3 Halton points pushed to the sphere.
    """
    chart = SphereChart(chart)
    if d < 1:
        raise OutOfDomainError(f"dimension must be >= 1, got {d}")
    if resolution < 16:
        raise OutOfDomainError(f"resolution must be >= 16, got {resolution}")

    if d == 1:
        if chart == SphereChart.POSITIVE_QUADRANT:
            nodes = np.array([[1.0]])
        else:
            nodes = np.array([[1.0], [-1.0]])
        weights = np.full(nodes.shape[0], 1.0 / nodes.shape[0])
        return SphereGrid(d, chart, nodes.shape[0], nodes, weights, "sign")

    if d == 2:
        if chart == SphereChart.FULL:
            angles = np.arange(resolution) * np.pi / resolution
            weights = np.full(resolution, 1.0 / resolution)
            interp = "periodic_linear"
        else:
            angles = np.linspace(0.0, 0.5 * np.pi, resolution)
            weights = np.ones(resolution)
            weights[[0, -1]] = 0.5
            weights /= weights.sum()
            interp = "linear"
        nodes = np.column_stack([np.cos(angles), np.sin(angles)])
        if chart == SphereChart.POSITIVE_QUADRANT:
            nodes = np.abs(nodes)
        return SphereGrid(d, chart, resolution, nodes, weights, interp)

    cube = qmc.Halton(d=d, scramble=False).random(resolution + 1)[1:]
    gaussian = norm.ppf(np.clip(cube, 1e-12, 1 - 1e-12))
    nodes = canonical_coords(gaussian, chart)
    weights = np.full(resolution, 1.0 / resolution)
    return SphereGrid(d, chart, resolution, nodes, weights, "nearest_barycentric")


class TransferOperator:
    """Node matrices of P_s for one law on one grid.

    The geometry (log|g_i x_j| and the interpolation stencil of g_i . x_j)
    is computed once; ``matrix(s)`` only reweights it, for real or complex s.
    """

    def __init__(self, ensemble: MatrixEnsemble, grid: SphereGrid):
        self.ensemble = ensemble
        self.grid = grid
        atoms = np.asarray(ensemble.atoms, dtype=float)
        probs = np.asarray(ensemble.probs, dtype=float)
        n_nodes = grid.size
        rows, cols, log_norms, stencil, atom_probs = [], [], [], [], []
        for g, p in zip(atoms, probs):
            images = grid.nodes @ g.T
            norms = np.linalg.norm(images, axis=1)
            if np.any(norms <= DEGENERATE_NORM):
                raise DegenerateActionError("an atom maps a grid node to 0")
            idx, wts = grid.locate(images / norms[:, None])
            width = idx.shape[1]
            rows.append(np.repeat(np.arange(n_nodes), width))
            cols.append(idx.ravel())
            stencil.append(wts.ravel())
            log_norms.append(np.repeat(np.log(norms), width))
            atom_probs.append(np.full(n_nodes * width, p))
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)
        self._stencil = np.concatenate(stencil)
        self._log_norms = np.concatenate(log_norms)
        self._probs = np.concatenate(atom_probs)

    def matrix(self, s: complex) -> sparse.csr_matrix:
        data = self._probs * self._stencil * np.exp(s * self._log_norms)
        return sparse.csr_matrix((data, (self._rows, self._cols)), shape=(self.grid.size, self.grid.size))

    def apply(self, s: complex, phi: ArrayLike) -> np.ndarray:
        return self.matrix(s) @ np.asarray(phi)


def apply_transfer(ensemble: MatrixEnsemble, s: float, grid: SphereGrid, phi: ArrayLike) -> np.ndarray:
    """(P_s phi)(x_j) = sum_i p_i |g_i x_j|^s phi(g_i . x_j)."""
    return TransferOperator(ensemble, grid).apply(s, phi)


@dataclass
class PowerResult:
    value: complex
    vector: np.ndarray
    residual: float
    iterations: int
    gap: Optional[float]


def power_iteration(
    matrix: sparse.spmatrix,
    start: np.ndarray,
    probe: Optional[np.ndarray] = None,
    tolerance: float = 1e-12,
    residual_tolerance: float = 1e-12,
    max_iter: int = 100_000,
) -> PowerResult:
    """Dominant eigenpair by power iteration with a residual stopping rule.

    The eigenvalue is read through ``probe`` (a positive functional) when
    given, otherwise through the sup-norm.  The contraction ratio of
    successive corrections is kept as a gap estimate.
    """
    v = np.asarray(start).astype(matrix.dtype if np.iscomplexobj(matrix.data) else float)
    v = v / _scale(v, probe)
    value_prev: Optional[complex] = None
    step_prev: Optional[float] = None
    gap: Optional[float] = None
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        w = matrix @ v
        value = _scale(w, probe)
        if value == 0:
            raise ConvergenceError("operator annihilated the iterate", gap=gap, iterations=iteration)
        residual = float(np.max(np.abs(w - value * v)) / np.max(np.abs(v)))
        floor = 64 * np.finfo(float).eps * abs(value)
        if value_prev is not None:
            change = abs(value - value_prev) / abs(value)
            if change <= tolerance and residual <= max(residual_tolerance, floor):
                return PowerResult(value, v, residual, iteration, gap)
        new_v = w / value
        step = float(np.max(np.abs(new_v - v)))
        if step_prev is not None and step_prev > 0 and step > 0:
            gap = step / step_prev
        step_prev = step
        value_prev = value
        v = new_v
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations (residual {residual:.3e})",
        gap=gap,
        iterations=max_iter,
    )


def _scale(v: np.ndarray, probe: Optional[np.ndarray]) -> complex:
    if probe is not None:
        return complex(np.dot(probe, v)) if np.iscomplexobj(v) else float(np.dot(probe, v))
    return float(np.max(np.abs(v)))


class SpectralSolver:
    """Solves P_s and P_s* on a fixed grid for any number of tilts s."""

    def __init__(self, ensemble: MatrixEnsemble, grid: SphereGrid):
        self.ensemble = ensemble
        self.grid = grid
        self.operator = TransferOperator(ensemble, grid)
        self.adjoint = TransferOperator(transpose(ensemble), grid)
        self.settings = get_settings()

    def _pair(self, matrix: sparse.csr_matrix) -> Tuple[PowerResult, PowerResult]:
        settings = self.settings
        right = power_iteration(
            matrix,
            np.ones(self.grid.size),
            tolerance=settings.eigen_tolerance,
            residual_tolerance=settings.residual_tolerance,
            max_iter=settings.max_iterations,
        )
        left = power_iteration(
            matrix.T.tocsr(),
            self.grid.weights.copy(),
            probe=np.ones(self.grid.size),
            tolerance=settings.eigen_tolerance,
            residual_tolerance=settings.residual_tolerance,
            max_iter=settings.max_iterations,
        )
        return right, left

    def solve(self, s: float) -> SpectralSolution:
        if s < -self.settings.eta0:
            raise OutOfDomainError(f"s={s} is below the admissible range [-{self.settings.eta0}, ...)")
        matrix = self.operator.matrix(s)
        right, left = self._pair(matrix)
        adjoint_matrix = self.adjoint.matrix(s)
        right_star, left_star = self._pair(adjoint_matrix)

        r_s, nu_s = _normalize(right.vector.real, left.vector.real)
        r_star, nu_star = _normalize(right_star.vector.real, left_star.vector.real)
        kappa = float(np.real(right.value))
        residual = float(np.max(np.abs(matrix @ r_s - kappa * r_s)) / np.max(np.abs(r_s)))
        kappa_star = float(np.real(right_star.value))
        residual_star = float(np.max(np.abs(adjoint_matrix @ r_star - kappa_star * r_star)) / np.max(np.abs(r_star)))

        kappa_dense = None
        if self.grid.size < self.settings.dense_check_limit:
            eigenvalues = np.linalg.eigvals(matrix.toarray())
            kappa_dense = float(np.max(np.abs(eigenvalues)))
            if abs(kappa_dense - kappa) > 1e-8 * kappa:
                logger.warning("dense cross-check disagrees", s=s, kappa=kappa, kappa_dense=kappa_dense)

        logger.debug(
            "solved transfer operator",
            s=s,
            kappa=kappa,
            residual=residual,
            iterations=right.iterations,
            resolution=self.grid.resolution,
        )
        return SpectralSolution(
            s=float(s),
            kappa=kappa,
            residual=residual,
            r_s=r_s,
            nu_s=nu_s,
            r_s_star=r_star,
            nu_s_star=nu_star,
            kappa_star=kappa_star,
            residual_star=residual_star,
            iterations=right.iterations,
            gap_estimate=right.gap,
            kappa_dense=kappa_dense,
            grid=self.grid,
        )


def _normalize(right: np.ndarray, left: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Probability left vector and right vector with nu(r) = 1."""
    right = np.abs(right)
    left = np.abs(left)
    nu = left / left.sum()
    r = right / float(np.dot(nu, right))
    return r, nu


def solve_eigen(ensemble: MatrixEnsemble, s: float, grid: SphereGrid) -> SpectralSolution:
    """kappa(s), r_s, nu_s and the adjoint pair on ``grid``."""
    return SpectralSolver(ensemble, grid).solve(s)


def _log_refinement(retry_state: RetryCallState) -> None:
    error = retry_state.outcome.exception() if retry_state.outcome else None
    logger.warning(
        "spectral solve failed, refining grid",
        attempt=retry_state.attempt_number,
        gap=getattr(error, "gap", None),
    )


def solve_with_refinement(
    ensemble: MatrixEnsemble,
    s: float,
    resolution: Optional[int] = None,
    attempts: Optional[int] = None,
) -> SpectralSolution:
    """solve_eigen, doubling the resolution after each ConvergenceError."""
    settings = get_settings()
    resolution = resolution or settings.resolution
    attempts = attempts or settings.refinement_attempts
    for attempt in Retrying(
        stop=stop_after_attempt(attempts),
        retry=retry_if_exception_type(ConvergenceError),
        after=_log_refinement,
        reraise=True,
    ):
        with attempt:
            level = resolution * 2 ** (attempt.retry_state.attempt_number - 1)
            grid = build_grid(ensemble.dim, ensemble.chart, level)
            return solve_eigen(ensemble, s, grid)
    raise ConvergenceError("no refinement attempt was made")


def cross_check_rs(solution: SpectralSolution, grid: Optional[SphereGrid] = None) -> float:
    """Sup-norm relative gap between r_s and its integral form against nu_s*."""
    grid = grid or solution.grid
    inner = np.abs(grid.nodes @ grid.nodes.T)
    kernel = np.power(np.maximum(inner, 1e-300), solution.s)
    rebuilt = kernel @ solution.nu_s_star
    rebuilt = rebuilt / float(np.dot(solution.nu_s, rebuilt))
    return float(np.max(np.abs(rebuilt - solution.r_s)) / np.max(np.abs(solution.r_s)))


def perturbed_matrix(
    operator: TransferOperator, solution: SpectralSolution, z: complex, q: float
) -> sparse.csr_matrix:
    """Node matrix of R_{s,z}: e^{-zq} / kappa(s) * D_r^{-1} P_{s+z} D_r."""
    r = solution.r_s
    scale = np.exp(-z * q) / solution.kappa
    matrix = operator.matrix(solution.s + z)
    return (sparse.diags(scale / r) @ matrix @ sparse.diags(r)).tocsr()


def apply_perturbed(
    ensemble: MatrixEnsemble,
    s: float,
    z: complex,
    q: float,
    grid: SphereGrid,
    phi: ArrayLike,
    solution: Optional[SpectralSolution] = None,
) -> np.ndarray:
    """(R_{s,z} phi)(x) = sum_i p_i q_1^s(x, g_i) e^{z(log|g_i x| - q)} phi(g_i . x)."""
    solution = solution or solve_eigen(ensemble, s, grid)
    operator = TransferOperator(ensemble, grid)
    return perturbed_matrix(operator, solution, z, q) @ np.asarray(phi, dtype=complex)


def dominant_eigenvalue(
    ensemble: MatrixEnsemble,
    s: float,
    z: complex,
    q: float,
    grid: SphereGrid,
    solution: Optional[SpectralSolution] = None,
    deflation_steps: int = 300,
) -> PerturbedSpectrum:
    """lambda_{s,z} by complex power iteration, with a deflated gap estimate."""
    settings = get_settings()
    solution = solution or solve_eigen(ensemble, s, grid)
    matrix = perturbed_matrix(TransferOperator(ensemble, grid), solution, z, q)
    stationary = solution.nu_s * solution.r_s
    right = power_iteration(
        matrix,
        np.ones(grid.size, dtype=complex),
        probe=stationary,
        tolerance=settings.eigen_tolerance,
        residual_tolerance=settings.residual_tolerance,
        max_iter=settings.max_iterations,
    )
    lam = complex(right.value)

    if grid.dim == 1:
        # one projective point: the operator has rank one
        gap = 0.0
    else:
        left = power_iteration(
            matrix.T.tocsr(),
            stationary.astype(complex),
            probe=np.ones(grid.size),
            tolerance=settings.eigen_tolerance,
            residual_tolerance=settings.residual_tolerance,
            max_iter=settings.max_iterations,
        )
        gap = _deflated_ratio(matrix, right.vector, left.vector, lam, deflation_steps) / abs(lam)

    if 1.0 - gap < settings.degenerate_gap:
        logger.warning("degenerate spectral gap", s=s, z=str(z), gap=gap)
    return PerturbedSpectrum(
        s=float(s),
        z_real=float(np.real(z)),
        z_imag=float(np.imag(z)),
        lambda_real=lam.real,
        lambda_imag=lam.imag,
        gap=float(gap),
        iterations=right.iterations,
    )


def _deflated_ratio(matrix: sparse.csr_matrix, right: np.ndarray, left: np.ndarray, lam: complex, steps: int) -> float:
    """Spectral radius estimate of R (I - Pi) with Pi the dominant projection."""
    pairing = complex(np.dot(left, right))
    x = np.cos(np.arange(matrix.shape[0], dtype=float)).astype(complex)
    ratio = 0.0
    for _ in range(steps):
        x = x - right * (np.dot(left, x) / pairing)
        size = float(np.linalg.norm(x))
        if size < 1e-300:
            return 0.0
        x = x / size
        y = matrix @ x
        ratio = float(np.linalg.norm(y - right * (np.dot(left, y) / pairing)))
        x = y
    return ratio


def stationary_pi(solution: SpectralSolution, phi: ArrayLike) -> float:
    """pi_s(phi) = nu_s(phi r_s) / nu_s(r_s)."""
    phi = np.asarray(phi, dtype=float)
    return float(np.dot(solution.nu_s, phi * solution.r_s) / np.dot(solution.nu_s, solution.r_s))


def variance_from_spectrum(
    ensemble: MatrixEnsemble,
    solution: SpectralSolution,
    q: float,
    grid: SphereGrid,
    h: float = 1e-3,
) -> float:
    """Second difference of log lambda_{s,z} at z = 0 (an estimate of sigma_s^2)."""
    plus = dominant_eigenvalue(ensemble, solution.s, h, q, grid, solution=solution)
    minus = dominant_eigenvalue(ensemble, solution.s, -h, q, grid, solution=solution)
    return (math.log(plus.lambda_real) + math.log(minus.lambda_real)) / (h * h)
