"""Finitely supported matrix laws and desk-scale condition checks."""

import itertools
import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import qmc

from .config import get_settings
from .exceptions import DegenerateActionError, EnsembleError
from .models import ConditionReport, EnsembleKind, MatrixEnsemble, is_allowable
from .utils.logging import get_logger

logger = get_logger(__name__)

I_MU_NOTE = "I_mu = [0, inf): a finitely supported law has all moments finite"


def make_ensemble(dim: int, kind: Union[EnsembleKind, str], atoms: object, probs: object) -> MatrixEnsemble:
    """Build a law, reporting every malformation as an EnsembleError."""
    try:
        return MatrixEnsemble.model_validate({"dim": dim, "kind": kind, "atoms": atoms, "probs": probs})
    except ValidationError as e:
        messages = "; ".join(str(error["msg"]).removeprefix("Value error, ") for error in e.errors())
        raise EnsembleError(messages) from e


def scalar_ensemble(values: Sequence[float], probs: Sequence[float]) -> MatrixEnsemble:
    """One-dimensional law with atoms ``values``."""
    values = [float(v) for v in values]
    kind = EnsembleKind.POSITIVE if all(v > 0 for v in values) else EnsembleKind.INVERTIBLE
    return make_ensemble(
        dim=1,
        kind=kind,
        atoms=np.asarray(values).reshape(-1, 1, 1),
        probs=np.asarray(probs, dtype=float),
    )


def positive_example() -> MatrixEnsemble:
    """The two-atom 2x2 positive law used throughout the test suite."""
    return make_ensemble(
        dim=2,
        kind=EnsembleKind.POSITIVE,
        atoms=[[[2.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 2.0]]],
        probs=[0.5, 0.5],
    )


def load_ensemble(path: Union[str, Path]) -> MatrixEnsemble:
    """Read ``{"dim", "kind", "atoms", "probs"}`` from a JSON file."""
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise EnsembleError(f"cannot read ensemble file {path}: {e}") from e
    if not isinstance(document, dict):
        raise EnsembleError(f"ensemble file {path} must hold a JSON object")
    missing = {"dim", "kind", "atoms", "probs"} - set(document)
    if missing:
        raise EnsembleError(f"ensemble file {path} lacks {sorted(missing)}")
    return make_ensemble(document["dim"], document["kind"], document["atoms"], document["probs"])


def dump_ensemble(ensemble: MatrixEnsemble, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(ensemble.to_document(), indent=2) + "\n", encoding="utf-8")
    return path


def transpose(ensemble: MatrixEnsemble) -> MatrixEnsemble:
    """Law of the transposed atoms, which drives the adjoint operator."""
    return make_ensemble(
        dim=ensemble.dim,
        kind=ensemble.kind,
        atoms=np.transpose(np.asarray(ensemble.atoms), (0, 2, 1)).copy(),
        probs=np.asarray(ensemble.probs).copy(),
    )


def _products(atoms: np.ndarray, depth: int) -> Iterator[Tuple[int, np.ndarray]]:
    """All products g_{i_k} ... g_{i_1} of length 1..depth, shortest first."""
    k = atoms.shape[0]
    for length in range(1, depth + 1):
        for word in itertools.product(range(k), repeat=length):
            product = atoms[word[0]]
            for index in word[1:]:
                product = atoms[index] @ product
            yield length, product


def _is_rational(ratio: float, tolerance: float, max_denominator: int) -> bool:
    approx = Fraction(ratio).limit_denominator(max_denominator)
    return abs(ratio - float(approx)) <= tolerance


def lattice_span(ensemble: MatrixEnsemble) -> Optional[float]:
    """Span h of the coset a + hZ holding every log|a_i| of a scalar law, if any.

    Any two-point law is on such a coset; the sums then live on a lattice and
    the non-lattice tail asymptotics only hold on average over the level.
    """
    if ensemble.dim != 1:
        return None
    settings = get_settings()
    logs = np.log(np.abs(np.asarray(ensemble.atoms, dtype=float)[:, 0, 0]))
    steps = [float(v) for v in np.abs(logs[1:] - logs[0]) if v > 1e-12]
    if not steps:
        return None
    base = steps[0]
    ratios = []
    for step in steps:
        ratio = step / base
        if not _is_rational(ratio, settings.rational_tolerance, settings.rational_max_denominator):
            return None
        ratios.append(Fraction(ratio).limit_denominator(settings.rational_max_denominator))
    numerator = math.gcd(*(r.numerator for r in ratios))
    denominator = math.lcm(*(r.denominator for r in ratios))
    return base * numerator / denominator


def validate(ensemble: MatrixEnsemble, depth: Optional[int] = None) -> ConditionReport:
    """Search products up to ``depth`` for positivity, proximality and non-arithmeticity.

    The flags are certificates "found at depth k", never proofs that a
    condition holds.
    """
    settings = get_settings()
    depth = depth or settings.search_depth
    problems = ensemble.problems(settings.singular_tolerance)
    if problems:
        raise EnsembleError("; ".join(problems))

    atoms = np.asarray(ensemble.atoms, dtype=float)
    positive_depth: Optional[int] = None
    proximal_depth: Optional[int] = None
    log_radii: List[float] = []

    for length, product in _products(atoms, depth):
        if positive_depth is None and np.all(product > 0):
            positive_depth = length
        moduli = np.sort(np.abs(np.linalg.eigvals(product)))[::-1]
        top = moduli[0]
        second = moduli[1] if moduli.size > 1 else 0.0
        if top > 0 and top - second > settings.proximal_gap * top:
            if proximal_depth is None:
                proximal_depth = length
            log_radius = math.log(top)
            if abs(log_radius) > 1e-12 and all(abs(log_radius - r) > 1e-12 for r in log_radii):
                log_radii.append(log_radius)

    witness = None
    for first, second in itertools.combinations(log_radii, 2):
        if not _is_rational(first / second, settings.rational_tolerance, settings.rational_max_denominator):
            witness = (first, second)
            break

    report = ConditionReport(
        allowable=all(is_allowable(g) for g in atoms),
        strictly_positive_product_found=positive_depth is not None,
        positive_depth=positive_depth,
        proximal_product_found=proximal_depth is not None,
        proximal_depth=proximal_depth,
        nonarithmetic_heuristic=witness is not None,
        nonarithmetic_witness=witness,
        search_depth=depth,
        i_mu_note=I_MU_NOTE,
        lattice_span=lattice_span(ensemble),
    )
    if report.lattice_span is not None:
        logger.info("scalar walk is lattice", span=report.lattice_span)
    logger.debug("validated ensemble", depth=depth, proximal=report.proximal_product_found)
    return report


def iota(g: np.ndarray, kind: Union[EnsembleKind, str]) -> float:
    """inf over the sphere (or positive quadrant) of |g x|."""
    settings = get_settings()
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise EnsembleError(f"iota needs a square matrix, got shape {g.shape}")
    if EnsembleKind(kind) == EnsembleKind.INVERTIBLE:
        if abs(np.linalg.det(g)) < settings.singular_tolerance:
            raise DegenerateActionError("iota of a singular matrix under the invertible kind")
        return float(np.linalg.svd(g, compute_uv=False)[-1])
    if np.any(g < 0):
        raise EnsembleError("positive kind with a negative entry")

    d = g.shape[0]
    if d == 1:
        return float(abs(g[0, 0]))
    if d == 2:
        return _iota_quadrant_2d(g, settings.iota_grid_size, settings.iota_tolerance)
    return _iota_quadrant(g, settings.iota_grid_size, settings.iota_tolerance)


def _iota_quadrant_2d(g: np.ndarray, grid_size: int, tolerance: float) -> float:
    angles = np.linspace(0.0, 0.5 * np.pi, grid_size)
    values = np.linalg.norm(g @ np.vstack([np.cos(angles), np.sin(angles)]), axis=0)
    best = int(np.argmin(values))
    step = angles[1] - angles[0]
    lo, hi = max(0.0, angles[best] - step), min(0.5 * np.pi, angles[best] + step)
    refined = minimize_scalar(
        lambda t: float(np.linalg.norm(g @ np.array([np.cos(t), np.sin(t)]))),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": tolerance},
    )
    return float(min(values[best], refined.fun))


def _iota_quadrant(g: np.ndarray, grid_size: int, tolerance: float) -> float:
    d = g.shape[0]
    points = qmc.Halton(d=d, scramble=False).random(grid_size + 1)[1:]
    points = np.vstack([points, np.eye(d)])
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    values = np.linalg.norm(points @ g.T, axis=1)
    start = points[int(np.argmin(values))]

    def objective(v: np.ndarray) -> float:
        v = np.abs(v)
        return float(np.linalg.norm(g @ v) / np.linalg.norm(v))

    refined = minimize(objective, start, method="Nelder-Mead", options={"xatol": tolerance, "fatol": tolerance})
    return float(min(values.min(), refined.fun))


def sample(ensemble: MatrixEnsemble, rng: np.random.Generator) -> int:
    """Index i drawn with probability p_i."""
    return int(sample_many(ensemble, rng, 1)[0])


def sample_many(ensemble: MatrixEnsemble, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent atom indices."""
    cumulative = np.cumsum(np.asarray(ensemble.probs, dtype=float))
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, rng.random(size), side="right")
