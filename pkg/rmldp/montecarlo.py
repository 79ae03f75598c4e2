"""Exact enumeration, crude Monte Carlo and the tilted importance sampler.

Under the tilted law the walk moves from y with probabilities
``w_i(y) = p_i |g_i y|^s r_s(g_i . y) / (kappa(s) r_s(y))``.  Off the grid
r_s is interpolated, the weights are renormalized to sum to one and the log of
the normalizer is carried in the path weight, so the likelihood ratio stays
exact for the interpolated r_s.  All path weights live in log space.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import binom

from .config import get_settings
from .ensemble import sample_many
from .exceptions import DegenerateActionError, EnumerationGuardError, OutOfDomainError, WeightOverflowError
from .models import (
    EstimateMethod,
    EstimateRecord,
    MatrixEnsemble,
    PsiDescriptor,
    SpectralSolution,
    SphereDirection,
    Theorem,
    WalkPath,
)
from .projective import DEGENERATE_NORM, act_many, canonical_coords
from .smoothing import evaluate_psi
from .spectral import SphereGrid
from .utils.logging import get_logger
from .utils.numerics import CompensatedArraySum, CompensatedSum, log_mean_exp, log_weighted_sum, safe_exp
from .utils.rng import Block, StreamFactory, map_ordered

logger = get_logger(__name__)

CRUDE_TAG = 1
TILTED_TAG = 2

PhiSpec = Union[str, np.ndarray, None]


@dataclass(frozen=True)
class Functional:
    """f(X_n, log|G_n x|) evaluated on a batch of endpoints."""

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    label: str

    def __call__(self, directions: np.ndarray, loggains: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(directions, loggains), dtype=float)


def constant_functional() -> Functional:
    return Functional(lambda directions, loggains: np.ones_like(loggains), "one")


def tail_functional(level: float, lower: bool = False) -> Functional:
    """Indicator of log|G_n x| >= level (or <= level)."""
    if lower:
        return Functional(lambda directions, loggains: (loggains <= level).astype(float), f"le {level:g}")
    return Functional(lambda directions, loggains: (loggains >= level).astype(float), f"ge {level:g}")


def interval_functional(lo: float, hi: float) -> Functional:
    return Functional(lambda directions, loggains: ((loggains >= lo) & (loggains < hi)).astype(float), f"in [{lo:g},{hi:g})")


def phi_nodes(phi: PhiSpec, solution: SpectralSolution) -> Optional[np.ndarray]:
    """Node values for 'one' (None), 'r_s', or an explicit array."""
    if phi is None or (isinstance(phi, str) and phi == "one"):
        return None
    if isinstance(phi, str):
        if phi == "r_s":
            return np.asarray(solution.r_s, dtype=float)
        raise ValueError(f"unknown phi {phi!r}")
    return np.asarray(phi, dtype=float)


def target_functional(
    psi: PsiDescriptor,
    offset: float,
    phi: Optional[np.ndarray] = None,
    grid: Optional[SphereGrid] = None,
) -> Functional:
    """phi(X_n) psi(log|G_n x| - offset), phi given on ``grid`` nodes."""

    def evaluate(directions: np.ndarray, loggains: np.ndarray) -> np.ndarray:
        values = evaluate_psi(psi, loggains - offset)
        if phi is not None:
            values = values * grid.interpolate(phi, directions)
        return values

    return Functional(evaluate, f"target {psi.label}")


class TiltedKernel:
    """Transition probabilities of the tilted chain for one spectral solution."""

    def __init__(self, ensemble: MatrixEnsemble, solution: SpectralSolution, grid: Optional[SphereGrid] = None):
        self.ensemble = ensemble
        self.solution = solution
        self.grid = grid or solution.grid
        if self.grid is None:
            raise ValueError("the spectral solution carries no grid")
        self.atoms = np.asarray(ensemble.atoms, dtype=float)
        self.log_probs = np.log(np.asarray(ensemble.probs, dtype=float))
        self.s = solution.s
        self.log_kappa = math.log(solution.kappa)
        self.r = np.asarray(solution.r_s, dtype=float)
        self.chart = ensemble.chart

    def r_at(self, states: np.ndarray) -> np.ndarray:
        return self.grid.interpolate(self.r, np.atleast_2d(states))

    def log_weights(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unnormalized log w_i(y) with shape (k, m), image directions and increments."""
        states = np.atleast_2d(states)
        m, d = states.shape
        images = np.einsum("kij,mj->kmi", self.atoms, states)
        norms = np.linalg.norm(images, axis=2)
        if np.any(norms <= DEGENERATE_NORM):
            raise DegenerateActionError("degenerate action in a tilted step")
        directions = canonical_coords(images, self.chart)
        increments = np.log(norms)
        r_images = self.grid.interpolate(self.r, directions.reshape(-1, d)).reshape(norms.shape)
        log_w = (
            self.log_probs[:, None]
            + self.s * increments
            + np.log(r_images)
            - self.log_kappa
            - np.log(self.r_at(states))[None, :]
        )
        return log_w, directions, increments

    def node_weights(self) -> np.ndarray:
        """w_i(x_j) at every grid node before renormalization, shape (N, k)."""
        log_w, _, _ = self.log_weights(self.grid.nodes)
        return np.exp(log_w).T

    def step(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Normalized weights (m, k), log normalizers (m,), image directions and increments."""
        log_w, directions, increments = self.log_weights(states)
        weights = np.exp(log_w).T
        total = weights.sum(axis=1)
        return weights / total[:, None], np.log(total), directions, increments

    def density(self, x: np.ndarray, g: np.ndarray, n: int = 1) -> float:
        """q_n^s(x, g) = |g x|^s r_s(g . x) / (kappa^n r_s(x))."""
        x = np.asarray(x, dtype=float)
        image = np.asarray(g, dtype=float) @ x
        norm = float(np.linalg.norm(image))
        if norm <= DEGENERATE_NORM:
            raise DegenerateActionError("degenerate action in the cocycle kernel")
        direction = canonical_coords(image, self.chart)
        r_image = float(self.r_at(direction)[0])
        r_here = float(self.r_at(canonical_coords(x, self.chart))[0])
        return math.exp(self.s * math.log(norm) - n * self.log_kappa) * r_image / r_here


def kernel_density(kernel: TiltedKernel, x: np.ndarray, g: np.ndarray, n: int = 1) -> float:
    return kernel.density(x, g, n)


def _draw(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(weights.shape[0])
    index = (np.cumsum(weights, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(index, weights.shape[1] - 1)


def tilted_walk(kernel: TiltedKernel, x: SphereDirection, n: int, rng: np.random.Generator) -> WalkPath:
    """One path of the tilted chain started at x."""
    if n < 1:
        raise ValueError("a walk needs n >= 1")
    state = np.asarray(x.coords, dtype=float)[None, :]
    directions = np.empty((n, x.dim))
    loggains = np.empty(n)
    indices: List[int] = []
    running = CompensatedSum()
    worst = 0.0
    for k in range(n):
        weights, log_total, images, increments = kernel.step(state)
        worst = max(worst, abs(math.expm1(float(log_total[0]))))
        i = int(_draw(weights, rng)[0])
        state = images[i, 0][None, :]
        directions[k] = state[0]
        loggains[k] = running.add(float(increments[i, 0]))
        indices.append(i)
    if worst > get_settings().renormalization_warning:
        logger.warning("off-grid tilted weights needed a large correction", correction=worst)
    return WalkPath(start=x, directions=directions, loggains=loggains, atom_indices=indices)


@dataclass
class _Batch:
    states: np.ndarray
    loggains: np.ndarray
    log_correction: np.ndarray
    max_correction: float = 0.0
    log_norm: Optional[np.ndarray] = None
    log_basis_max: Optional[np.ndarray] = None


def _crude_batch(ensemble: MatrixEnsemble, x: SphereDirection, n: int, size: int, rng: np.random.Generator) -> _Batch:
    atoms = np.asarray(ensemble.atoms, dtype=float)
    states = np.tile(np.asarray(x.coords, dtype=float), (size, 1))
    total = CompensatedArraySum(size)
    for _ in range(n):
        indices = sample_many(ensemble, rng, size)
        states, increments = act_many(atoms, indices, states, ensemble.chart)
        total.add(increments)
    return _Batch(states, total.value, np.zeros(size))


def _tilted_batch(
    kernel: TiltedKernel,
    x: SphereDirection,
    n: int,
    size: int,
    rng: np.random.Generator,
    track_product: bool = False,
) -> _Batch:
    d = x.dim
    rows = np.arange(size)
    states = np.tile(np.asarray(x.coords, dtype=float), (size, 1))
    total = CompensatedArraySum(size)
    correction = CompensatedArraySum(size)
    worst = 0.0
    if track_product:
        product = np.tile(np.eye(d), (size, 1, 1))
        log_scale = np.zeros(size)
    for _ in range(n):
        weights, log_total, images, increments = kernel.step(states)
        indices = _draw(weights, rng)
        states = images[indices, rows]
        total.add(increments[indices, rows])
        correction.add(log_total)
        worst = max(worst, float(np.max(np.abs(np.expm1(log_total)))))
        if track_product:
            product = kernel.atoms[indices] @ product
            scale = np.max(np.abs(product), axis=(1, 2))
            product /= scale[:, None, None]
            log_scale += np.log(scale)
    batch = _Batch(states, total.value, correction.value, worst)
    if track_product:
        batch.log_norm = log_scale + np.log(np.linalg.norm(product, ord=2, axis=(1, 2)))
        batch.log_basis_max = log_scale + np.log(np.max(np.linalg.norm(product, axis=1), axis=1))
    return batch


def _log_path_weights(kernel: TiltedKernel, x: SphereDirection, n: int, batch: _Batch) -> np.ndarray:
    """log of kappa^n r(x) e^{-s S_n} / r(X_n) times the renormalization factors."""
    log_r_start = math.log(float(kernel.r_at(np.asarray(x.coords)[None, :])[0]))
    log_w = (
        n * kernel.log_kappa
        + log_r_start
        - kernel.s * batch.loggains
        - np.log(kernel.r_at(batch.states))
        + batch.log_correction
    )
    if not np.all(np.isfinite(log_w)):
        raise WeightOverflowError("non-finite importance log-weight")
    spread = float(np.max(log_w) - np.min(log_w))
    guard = get_settings().log_weight_guard
    if spread > guard:
        raise WeightOverflowError(f"importance log-weights spread over {spread:.4g} nats, above the guard {guard:g}")
    return log_w


def _log_terms(log_weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    if np.any(values < 0):
        raise ValueError("Monte Carlo functionals must be nonnegative")
    with np.errstate(divide="ignore"):
        return log_weights + np.log(values)


def _record(
    method: EstimateMethod,
    theorem: Optional[Theorem],
    n: int,
    log_terms: np.ndarray,
    seed: int,
    s: Optional[float] = None,
    l: float = 0.0,
    x_id: int = 0,
    diagnostics: Optional[Dict[str, float]] = None,
) -> EstimateRecord:
    log_value, rel_error = log_mean_exp(log_terms)
    value = safe_exp(log_value)
    if log_value == -math.inf:
        std_error, rel_error = 0.0, math.inf
    else:
        std_error = value * rel_error
    return EstimateRecord(
        method=method,
        theorem=theorem,
        s=s,
        n=n,
        l=l,
        x_id=x_id,
        value=value,
        log_value=log_value,
        std_error=std_error,
        rel_std_error=rel_error,
        n_samples=int(log_terms.size),
        ci95=(max(0.0, value - 1.96 * std_error), value + 1.96 * std_error),
        seed=seed,
        diagnostics=diagnostics or {},
    )


def _run_blocks(
    job: Callable[[Block, np.random.Generator], Tuple[np.ndarray, ...]],
    n_samples: int,
    seed: int,
    tag: Tuple[int, ...],
    workers: int,
) -> List[Tuple[np.ndarray, ...]]:
    if n_samples < 1:
        raise ValueError("need at least one sample")
    streams = StreamFactory(seed, get_settings().block_size)
    return map_ordered(lambda block: job(block, streams.block_generator(block, *tag)), streams.blocks(n_samples), workers)


def crude_estimate(
    ensemble: MatrixEnsemble,
    x: SphereDirection,
    n: int,
    functional: Functional,
    n_samples: int,
    seed: Optional[int] = None,
    workers: int = 1,
    theorem: Optional[Theorem] = None,
    s: Optional[float] = None,
    l: float = 0.0,
    x_id: int = 0,
) -> EstimateRecord:
    """Plain sample mean of ``functional`` over walks under the original law."""
    seed = get_settings().resolve_seed(seed)

    def job(block: Block, rng: np.random.Generator) -> Tuple[np.ndarray, ...]:
        batch = _crude_batch(ensemble, x, n, block.size, rng)
        return (functional(batch.states, batch.loggains),)

    values = np.concatenate([part[0] for part in _run_blocks(job, n_samples, seed, (CRUDE_TAG, n), workers)])
    record = _record(EstimateMethod.CRUDE, theorem, n, _log_terms(np.zeros(values.size), values), seed, s, l, x_id)
    logger.info("crude estimate", n=n, samples=n_samples, value=record.value, hits=int(np.count_nonzero(values)))
    return record


def crude_tail(
    ensemble: MatrixEnsemble,
    x: SphereDirection,
    n: int,
    level: float,
    n_samples: int,
    seed: Optional[int] = None,
    workers: int = 1,
    lower: bool = False,
) -> EstimateRecord:
    """P(log|G_n x| >= level) (or <= level) by crude Monte Carlo."""
    theorem = Theorem.LOWER_TAIL if lower else Theorem.UPPER_TAIL
    return crude_estimate(ensemble, x, n, tail_functional(level, lower), n_samples, seed, workers, theorem)


def tilted_estimate(
    kernel: TiltedKernel,
    x: SphereDirection,
    n: int,
    functional: Functional,
    n_samples: int,
    seed: Optional[int] = None,
    workers: int = 1,
    theorem: Optional[Theorem] = None,
    l: float = 0.0,
    x_id: int = 0,
) -> EstimateRecord:
    """E[f] = kappa^n r(x) E_tilted[e^{-s S_n} f / r(X_n)] by importance sampling."""
    settings = get_settings()
    seed = settings.resolve_seed(seed)

    def job(block: Block, rng: np.random.Generator) -> Tuple[np.ndarray, ...]:
        batch = _tilted_batch(kernel, x, n, block.size, rng)
        log_w = _log_path_weights(kernel, x, n, batch)
        values = functional(batch.states, batch.loggains)
        return _log_terms(log_w, values), batch.loggains, np.array([batch.max_correction])

    parts = _run_blocks(job, n_samples, seed, (TILTED_TAG, n), workers)
    log_terms = np.concatenate([part[0] for part in parts])
    loggains = np.concatenate([part[1] for part in parts])
    worst = float(max(part[2][0] for part in parts))
    if worst > settings.renormalization_warning:
        logger.warning("off-grid tilted weights needed a large correction; refine the grid", correction=worst)
    drift = loggains / n
    diagnostics = {
        "renormalization_max": worst,
        "drift": float(np.mean(drift)),
        "drift_se": float(np.std(drift, ddof=1) / math.sqrt(drift.size)) if drift.size > 1 else 0.0,
    }
    record = _record(EstimateMethod.TILTED, theorem, n, log_terms, seed, kernel.s, l, x_id, diagnostics)
    logger.info(
        "tilted estimate",
        n=n,
        s=kernel.s,
        samples=n_samples,
        log_value=record.log_value,
        rel_std_error=record.rel_std_error,
    )
    return record


def tilted_tail(
    ensemble: MatrixEnsemble,
    solution: SpectralSolution,
    x: SphereDirection,
    n: int,
    q: float,
    l: float,
    n_samples: int,
    seed: Optional[int] = None,
    workers: int = 1,
    x_id: int = 0,
) -> EstimateRecord:
    """P(log|G_n x| >= n(q + l)) under the tilt of ``solution``."""
    kernel = TiltedKernel(ensemble, solution)
    functional = tail_functional(n * (q + l))
    return tilted_estimate(kernel, x, n, functional, n_samples, seed, workers, Theorem.UPPER_TAIL, l, x_id)


def lower_tail(
    ensemble: MatrixEnsemble,
    solution: SpectralSolution,
    x: SphereDirection,
    n: int,
    q: float,
    l: float,
    n_samples: int,
    seed: Optional[int] = None,
    workers: int = 1,
    x_id: int = 0,
) -> EstimateRecord:
    """P(log|G_n x| <= n(q + l)) with a negative tilt."""
    if solution.s >= 0:
        raise OutOfDomainError(f"lower tails need s < 0, got s={solution.s}")
    kernel = TiltedKernel(ensemble, solution)
    functional = tail_functional(n * (q + l), lower=True)
    return tilted_estimate(kernel, x, n, functional, n_samples, seed, workers, Theorem.LOWER_TAIL, l, x_id)


def tilted_target(
    ensemble: MatrixEnsemble,
    solution: SpectralSolution,
    x: SphereDirection,
    n: int,
    q: float,
    l: float,
    phi: PhiSpec,
    psi: PsiDescriptor,
    n_samples: int,
    seed: Optional[int] = None,
    workers: int = 1,
    x_id: int = 0,
    theorem: Theorem = Theorem.TARGET,
) -> EstimateRecord:
    """E[phi(X_n) psi(log|G_n x| - n(q + l))] by importance sampling."""
    kernel = TiltedKernel(ensemble, solution)
    functional = target_functional(psi, n * (q + l), phi_nodes(phi, solution), kernel.grid)
    return tilted_estimate(kernel, x, n, functional, n_samples, seed, workers, theorem, l, x_id)


def _norm_estimate(
    ensemble: MatrixEnsemble,
    solution: SpectralSolution,
    n: int,
    q: float,
    l: float,
    n_samples: int,
    seed: Optional[int],
    workers: int,
    x: Optional[SphereDirection],
    lower: bool,
) -> EstimateRecord:
    settings = get_settings()
    seed = settings.resolve_seed(seed)
    kernel = TiltedKernel(ensemble, solution)
    d = ensemble.dim
    if x is None:
        x = SphereDirection(coords=np.eye(d)[0], chart=ensemble.chart)
    level = n * (q + l)
    half_log_d = 0.5 * math.log(d)

    def job(block: Block, rng: np.random.Generator) -> Tuple[np.ndarray, ...]:
        batch = _tilted_batch(kernel, x, n, block.size, rng, track_product=True)
        log_w = _log_path_weights(kernel, x, n, batch)
        basis_bound = batch.log_basis_max + half_log_d
        if lower:
            direct = batch.log_norm <= level
            inner = basis_bound <= level
            outer = batch.loggains <= level
        else:
            direct = batch.log_norm >= level
            inner = batch.loggains >= level
            outer = basis_bound >= level
        return (
            _log_terms(log_w, direct.astype(float)),
            _log_terms(log_w, inner.astype(float)),
            _log_terms(log_w, outer.astype(float)),
            np.array([batch.max_correction]),
        )

    parts = _run_blocks(job, n_samples, seed, (TILTED_TAG, n), workers)
    direct_terms = np.concatenate([part[0] for part in parts])
    inner_log, _ = log_mean_exp(np.concatenate([part[1] for part in parts]))
    outer_log, _ = log_mean_exp(np.concatenate([part[2] for part in parts]))
    theorem = Theorem.NORM_LOWER_TAIL if lower else Theorem.NORM_TAIL
    record = _record(EstimateMethod.TILTED, theorem, n, direct_terms, seed, solution.s, l)
    record.diagnostics = {
        "envelope_lower_log": inner_log,
        "envelope_upper_log": outer_log,
        "rate": record.log_value / n,
        "renormalization_max": float(max(part[3][0] for part in parts)),
    }
    logger.info("norm tail estimate", n=n, s=solution.s, lower=lower, rate=record.log_value / n)
    return record


def norm_tail(
    ensemble: MatrixEnsemble,
    solution: SpectralSolution,
    n: int,
    q: float,
    l: float,
    n_samples: int,
    seed: Optional[int] = None,
    workers: int = 1,
    x: Optional[SphereDirection] = None,
) -> EstimateRecord:
    """P(log||G_n|| >= n(q + l)) with basis-vector envelopes.

    ``|G x| <= ||G|| <= sqrt(d) max_i |G e_i|`` per sample, so the two
    envelope probabilities bracket the estimate path by path.
    """
    return _norm_estimate(ensemble, solution, n, q, l, n_samples, seed, workers, x, lower=False)


def norm_lower_tail(
    ensemble: MatrixEnsemble,
    solution: SpectralSolution,
    n: int,
    q: float,
    l: float,
    n_samples: int,
    seed: Optional[int] = None,
    workers: int = 1,
    x: Optional[SphereDirection] = None,
) -> EstimateRecord:
    """P(log||G_n|| <= n(q + l)) with a negative tilt."""
    if solution.s >= 0:
        raise OutOfDomainError(f"lower tails need s < 0, got s={solution.s}")
    return _norm_estimate(ensemble, solution, n, q, l, n_samples, seed, workers, x, lower=True)


def _is_countable(ensemble: MatrixEnsemble) -> bool:
    return ensemble.dim == 1 and 2 <= ensemble.n_atoms <= 3


def _scalar_terms(a: np.ndarray, counts: np.ndarray, x0: float, functional: Functional) -> np.ndarray:
    """Functional values at the endpoints fixed by per-atom draw counts (rows of ``counts``)."""
    loggains = counts @ np.log(np.abs(a))
    flips = counts @ (a < 0).astype(int)
    directions = (x0 * np.where(flips % 2 == 1, -1.0, 1.0))[:, None]
    return functional(directions, loggains)


def _binomial_exhaustive(ensemble: MatrixEnsemble, x: SphereDirection, n: int, functional: Functional) -> Tuple[float, float, int]:
    """Sum over the number k of draws of atom 0; exact for any n."""
    a = np.asarray(ensemble.atoms, dtype=float)[:, 0, 0]
    p = float(np.asarray(ensemble.probs)[0])
    k = np.arange(n + 1)
    values = _scalar_terms(a, np.column_stack([k, n - k]), float(x.coords[0]), functional)
    log_value = log_weighted_sum(binom.logpmf(k, n, p), values)
    return safe_exp(log_value), log_value, n + 1


def _multinomial_exhaustive(
    ensemble: MatrixEnsemble, x: SphereDirection, n: int, functional: Functional
) -> Tuple[float, float, int]:
    """Three-atom scalar laws: sum over counts (c0, c1, n - c0 - c1), one c0 slice at a time."""
    a = np.asarray(ensemble.atoms, dtype=float)[:, 0, 0]
    log_p = np.log(np.asarray(ensemble.probs, dtype=float))
    x0 = float(x.coords[0])
    log_n_factorial = float(gammaln(n + 1))
    slices: List[float] = []
    terms = 0
    for c0 in range(n + 1):
        c1 = np.arange(n - c0 + 1)
        c2 = n - c0 - c1
        counts = np.column_stack([np.full_like(c1, c0), c1, c2])
        log_pmf = log_n_factorial - gammaln(c0 + 1) - gammaln(c1 + 1) - gammaln(c2 + 1) + counts @ log_p
        slices.append(log_weighted_sum(log_pmf, _scalar_terms(a, counts, x0, functional)))
        terms += int(c1.size)
    finite = np.isfinite(slices)
    log_value = float(logsumexp(np.asarray(slices)[finite])) if finite.any() else -math.inf
    return safe_exp(log_value), log_value, terms


def _enumerate(
    ensemble: MatrixEnsemble,
    x: SphereDirection,
    n: int,
    kernel: Optional[TiltedKernel] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Every path of length n: endpoints, log-gains, log-probabilities, log-corrections.

    With a kernel the probabilities are those of the tilted chain.
    """
    atoms = np.asarray(ensemble.atoms, dtype=float)
    k = atoms.shape[0]
    guard = get_settings().enumeration_guard
    if k**n > guard:
        raise EnumerationGuardError(f"{k}^{n} paths exceed the enumeration guard {guard}")
    states = np.asarray(x.coords, dtype=float)[None, :]
    loggains = np.zeros(1)
    log_prob = np.zeros(1)
    log_correction = np.zeros(1)
    log_p = np.log(np.asarray(ensemble.probs, dtype=float))
    for _ in range(n):
        m = states.shape[0]
        if kernel is None:
            images = np.einsum("kij,mj->kmi", atoms, states)
            norms = np.linalg.norm(images, axis=2)
            if np.any(norms <= DEGENERATE_NORM):
                raise DegenerateActionError("degenerate action during enumeration")
            directions = canonical_coords(images, ensemble.chart)
            increments = np.log(norms)
            step_log_p = np.repeat(log_p[:, None], m, axis=1)
            step_correction = np.zeros((k, m))
        else:
            weights, log_total, directions, increments = kernel.step(states)
            step_log_p = np.log(weights).T
            step_correction = np.repeat(log_total[None, :], k, axis=0)
        states = directions.reshape(k * m, -1)
        loggains = (loggains[None, :] + increments).ravel()
        log_prob = (log_prob[None, :] + step_log_p).ravel()
        log_correction = (log_correction[None, :] + step_correction).ravel()
    return states, loggains, log_prob, log_correction


def _exact_record(
    theorem: Optional[Theorem],
    n: int,
    value: float,
    log_value: float,
    paths: int,
    s: Optional[float] = None,
    l: float = 0.0,
    x_id: int = 0,
) -> EstimateRecord:
    return EstimateRecord(
        method=EstimateMethod.EXHAUSTIVE,
        theorem=theorem,
        s=s,
        n=n,
        l=l,
        x_id=x_id,
        value=value,
        log_value=log_value,
        std_error=0.0,
        rel_std_error=0.0,
        n_samples=paths,
        ci95=(value, value),
        seed=0,
    )


def exhaustive(
    ensemble: MatrixEnsemble,
    x: SphereDirection,
    n: int,
    functional: Functional,
    theorem: Optional[Theorem] = None,
    s: Optional[float] = None,
    l: float = 0.0,
    x_id: int = 0,
) -> EstimateRecord:
    """Exact E[f(X_n, log|G_n x|)] by summing over all paths.

    Scalar laws with two or three atoms sum over the binomial or multinomial
    law of the draw counts instead, which removes the path guard.
    """
    if _is_countable(ensemble):
        route = _binomial_exhaustive if ensemble.n_atoms == 2 else _multinomial_exhaustive
        value, log_value, paths = route(ensemble, x, n, functional)
        return _exact_record(theorem, n, value, log_value, paths, s, l, x_id)
    states, loggains, log_prob, _ = _enumerate(ensemble, x, n)
    values = functional(states, loggains)
    value = math.fsum((np.exp(log_prob) * values).tolist())
    if np.all(values >= 0):
        log_value = log_weighted_sum(log_prob, values)
    else:
        log_value = math.log(value) if value > 0 else -math.inf
    return _exact_record(theorem, n, value, log_value, int(values.size), s, l, x_id)


def exhaustive_tilted(
    ensemble: MatrixEnsemble,
    solution: SpectralSolution,
    x: SphereDirection,
    n: int,
    functional: Functional,
) -> EstimateRecord:
    """Enumeration under the tilted chain of the importance-weighted functional.

    Equals ``exhaustive`` with the same functional up to rounding.
    """
    kernel = TiltedKernel(ensemble, solution)
    states, loggains, log_prob, log_correction = _enumerate(ensemble, x, n, kernel)
    batch = _Batch(states, loggains, log_correction)
    log_w = _log_path_weights(kernel, x, n, batch)
    values = functional(states, loggains)
    value = math.fsum((np.exp(log_prob + log_w) * values).tolist())
    log_value = math.log(value) if value > 0 else -math.inf
    return _exact_record(None, n, value, log_value, int(values.size), solution.s)

