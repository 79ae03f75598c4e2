"""Measured invariants of every numerical layer, collected into a VerifyReport."""

import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import get_settings
from ..cumulant import CumulantModel, build_model
from ..ensemble import iota, validate
from ..exceptions import DegenerateVarianceError, EnumerationGuardError, OutOfDomainError, RmldpError
from ..models import (
    CheckStatus,
    EnsembleKind,
    ExperimentConfig,
    InvariantResult,
    MatrixEnsemble,
    PsiDescriptor,
    PsiKind,
    SpectralSolution,
    SphereChart,
    SphereDirection,
    VerifyReport,
)
from ..montecarlo import (
    TiltedKernel,
    constant_functional,
    exhaustive,
    exhaustive_tilted,
    tail_functional,
    tilted_estimate,
)
from ..predict import llt_pred, target_pred, upper_tail_pred
from ..projective import angular_distance, canonicalize, hilbert_distance, product_log_norm, walk
from ..smoothing import build_kernel, convolve, envelopes, verify_sandwich
from ..spectral import (
    SphereGrid,
    SpectralSolver,
    TransferOperator,
    apply_perturbed,
    build_grid,
    cross_check_rs,
    dominant_eigenvalue,
    variance_from_spectrum,
)
from ..utils.csvio import write_json
from ..utils.logging import get_logger, run_context
from ..utils.rng import StreamFactory

logger = get_logger(__name__)

SUITES = ("ensemble", "projective", "spectral", "cumulant", "smoothing", "montecarlo", "predict")
SANDWICH_EPSILONS = (0.2, 0.1, 0.05)

# measured value, tolerance, passed, detail
Measure = Tuple[float, float, bool, str]


class _Skip(Exception):
    """The invariant does not apply to this law."""


def _bound(measured: float, tolerance: float, detail: str = "") -> Measure:
    return float(measured), float(tolerance), bool(measured <= tolerance), detail


class VerificationService:
    """Runs the invariant suites against one law."""

    def __init__(
        self,
        ensemble: MatrixEnsemble,
        s_values: Sequence[float] = (),
        resolution: Optional[int] = None,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        s_range: Optional[Tuple[float, float]] = None,
        n_cheb: Optional[int] = None,
        suites: Optional[Sequence[str]] = None,
    ):
        settings = get_settings()
        self.ensemble = ensemble
        self.resolution = resolution or settings.resolution
        self.seed = settings.resolve_seed(seed)
        self.workers = workers or settings.workers
        self.s_range = s_range or (settings.s_min, settings.s_max)
        self.n_cheb = n_cheb
        self.suites = list(suites or SUITES)
        unknown = set(self.suites) - set(SUITES)
        if unknown:
            raise ValueError(f"unknown verification suites: {sorted(unknown)}")

        s_min, s_max = self.s_range
        positive = [s for s in s_values if 0 < s < s_max]
        negative = [s for s in s_values if s_min < s < 0]
        self.s_positive = float(positive[0]) if positive else min(1.0, 0.5 * s_max)
        self.s_negative = float(negative[0]) if negative else None

        self._grid: Optional[SphereGrid] = None
        self._model: Optional[CumulantModel] = None
        self._solutions: Dict[float, SpectralSolution] = {}
        self._streams = StreamFactory(self.seed)

    @classmethod
    def from_config(cls, config: ExperimentConfig, ensemble: MatrixEnsemble, **overrides) -> "VerificationService":
        options = {
            "s_values": config.s_values,
            "resolution": config.resolution,
            "seed": config.estimator.seed,
            "workers": config.estimator.workers,
            "s_range": config.s_range,
            "n_cheb": config.n_cheb,
        }
        options.update({key: value for key, value in overrides.items() if value is not None})
        return cls(ensemble, **options)

    @property
    def grid(self) -> SphereGrid:
        if self._grid is None:
            self._grid = build_grid(self.ensemble.dim, self.ensemble.chart, self.resolution)
        return self._grid

    @property
    def model(self) -> CumulantModel:
        if self._model is None:
            s_min, s_max = self.s_range
            self._model = build_model(self.ensemble, self.grid, s_min, s_max, self.n_cheb, self.workers)
        return self._model

    def solution(self, s: float) -> SpectralSolution:
        if s not in self._solutions:
            self._solutions[s] = SpectralSolver(self.ensemble, self.grid).solve(s)
        return self._solutions[s]

    @property
    def start(self) -> SphereDirection:
        d = self.ensemble.dim
        chart = SphereChart(self.ensemble.chart)
        return canonicalize(np.ones(d) if chart == SphereChart.POSITIVE_QUADRANT else np.eye(d)[0], chart)

    def run(self, output_dir: Optional[Path] = None) -> VerifyReport:
        """Every selected suite in a fixed order; optionally writes verify.json."""
        with run_context(seed=self.seed):
            return self._run(output_dir)

    def _run(self, output_dir: Optional[Path]) -> VerifyReport:
        report = VerifyReport()
        for suite in self.suites:
            logger.info("verifying", suite=suite)
            for name, check in getattr(self, f"_{suite}_checks")():
                report.results.append(self._measure(suite, name, check))
        logger.info(
            "verification finished",
            passed=report.count(CheckStatus.PASSED),
            failed=report.count(CheckStatus.FAILED),
            skipped=report.count(CheckStatus.SKIPPED),
        )
        if output_dir is not None:
            write_json(Path(output_dir) / "verify.json", report.model_dump(mode="json"))
        return report

    def _measure(self, module: str, name: str, check: Callable[[], Measure]) -> InvariantResult:
        try:
            measured, tolerance, ok, detail = check()
        except (_Skip, DegenerateVarianceError, EnumerationGuardError) as e:
            return InvariantResult(name=name, module=module, status=CheckStatus.SKIPPED, detail=str(e))
        except (RmldpError, ValueError, ArithmeticError) as e:
            logger.warning("invariant raised", module=module, name=name, error=str(e))
            return InvariantResult(name=name, module=module, status=CheckStatus.FAILED, detail=f"{type(e).__name__}: {e}")
        status = CheckStatus.PASSED if ok else CheckStatus.FAILED
        if not ok:
            logger.warning("invariant failed", module=module, name=name, measured=measured, tolerance=tolerance)
        return InvariantResult(
            name=name, module=module, status=status, measured=measured, tolerance=tolerance, detail=detail
        )

    def _random_directions(self, count: int, tag: int) -> List[SphereDirection]:
        rng = self._streams.generator(tag)
        chart = SphereChart(self.ensemble.chart)
        vectors = rng.standard_normal((count, self.ensemble.dim))
        if chart == SphereChart.POSITIVE_QUADRANT:
            vectors = np.abs(vectors) + 1e-3
        return [canonicalize(v, chart) for v in vectors]

    # ensemble

    def _ensemble_checks(self) -> List[Tuple[str, Callable[[], Measure]]]:
        atoms = np.asarray(self.ensemble.atoms, dtype=float)
        kind = self.ensemble.kind

        def below_norm() -> Measure:
            return _bound(max(iota(g, kind) - np.linalg.norm(g, 2) for g in atoms), 1e-12)

        def homogeneous() -> Measure:
            worst = max(abs(iota(2.5 * g, kind) - 2.5 * iota(g, kind)) / max(iota(g, kind), 1e-300) for g in atoms)
            return _bound(worst, 1e-6)

        def inverse() -> Measure:
            if EnsembleKind(kind) != EnsembleKind.INVERTIBLE:
                raise _Skip("positive law")
            worst = max(abs(iota(g, kind) * np.linalg.norm(np.linalg.inv(g), 2) - 1.0) for g in atoms)
            return _bound(worst, 1e-10)

        def pure() -> Measure:
            first = validate(self.ensemble).model_dump()
            second = validate(self.ensemble).model_dump()
            return _bound(0.0 if first == second else 1.0, 0.0)

        return [
            ("iota_below_norm", below_norm),
            ("iota_homogeneous", homogeneous),
            ("iota_inverse_norm", inverse),
            ("validate_pure", pure),
        ]

    # projective

    def _projective_checks(self) -> List[Tuple[str, Callable[[], Measure]]]:
        def cocycle() -> Measure:
            path = walk(self.ensemble, self.start, 60, self._streams.generator(11))
            direct = product_log_norm(self.ensemble, self.start, np.asarray(path.atom_indices))
            return _bound(abs(path.loggains[-1] - direct) / max(1.0, abs(direct)), 1e-9)

        def symmetric() -> Measure:
            xs = self._random_directions(50, 12)
            ys = self._random_directions(50, 13)
            worst = max(abs(angular_distance(x, y) - angular_distance(y, x)) for x, y in zip(xs, ys))
            return _bound(worst, 1e-12)

        def contraction() -> Measure:
            if SphereChart(self.ensemble.chart) != SphereChart.POSITIVE_QUADRANT:
                raise _Skip("the Hilbert distance lives on the quadrant")
            xs = self._random_directions(30, 14)
            ys = self._random_directions(30, 15)
            atoms = np.asarray(self.ensemble.atoms, dtype=float)
            worst = -math.inf
            for g in atoms:
                for x, y in zip(xs, ys):
                    gx = canonicalize(g @ x.coords, x.chart)
                    gy = canonicalize(g @ y.coords, y.chart)
                    worst = max(worst, hilbert_distance(gx, gy) - hilbert_distance(x, y))
            return _bound(worst, 1e-12, "d(g.x, g.y) - d(x, y)")

        return [
            ("walk_matches_product", cocycle),
            ("angular_distance_symmetric", symmetric),
            ("hilbert_contraction", contraction),
        ]

    # spectral

    def _spectral_checks(self) -> List[Tuple[str, Callable[[], Measure]]]:
        s = self.s_positive
        grid = self.grid

        def residual() -> Measure:
            return _bound(self.solution(s).residual, 1e-8)

        def duality() -> Measure:
            solution = self.solution(s)
            operator = TransferOperator(self.ensemble, grid)
            rng = self._streams.generator(21)
            worst = 0.0
            for _ in range(20):
                phi = rng.standard_normal(grid.size)
                gap = np.dot(solution.nu_s, operator.apply(s, phi)) - solution.kappa * np.dot(solution.nu_s, phi)
                worst = max(worst, abs(gap) / np.max(np.abs(phi)))
            return _bound(worst / solution.kappa, 1e-9)

        def stochastic() -> Measure:
            q = self.model.derivative(s, 1)
            image = apply_perturbed(self.ensemble, s, 0.0, q, grid, np.ones(grid.size), self.solution(s))
            return _bound(float(np.max(np.abs(image - 1.0))), 1e-10)

        def eigenvalue_identity() -> Measure:
            solution = self.solution(s)
            q = self.model.derivative(s, 1)
            worst = 0.0
            for z in (-0.1, -0.05, 0.05, 0.1):
                spectrum = dominant_eigenvalue(self.ensemble, s, z, q, grid, solution=solution)
                expected = math.exp(-q * z) * self.solution(s + z).kappa / solution.kappa
                worst = max(worst, abs(spectrum.lambda_real - expected))
            return _bound(worst, 1e-6 if self.ensemble.dim == 1 else 5e-4)

        def variance() -> Measure:
            solution = self.solution(s)
            sigma2 = self.model.sigma2(s)
            measured = variance_from_spectrum(self.ensemble, solution, self.model.derivative(s, 1), grid)
            if measured <= 0:
                return measured, 1e-4, False, "non-positive variance"
            return _bound(abs(measured - sigma2) / sigma2, 1e-4)

        def gap() -> Measure:
            spectrum = dominant_eigenvalue(self.ensemble, s, 0.0, 0.0, grid, solution=self.solution(s))
            return _bound(spectrum.gap, 1.0 - get_settings().degenerate_gap)

        def resolution_trend() -> Measure:
            if self.ensemble.dim == 1:
                raise _Skip("the one-dimensional sphere is exact")
            levels = [max(16, self.resolution // 4), max(16, self.resolution // 2), self.resolution]
            kappas = [
                SpectralSolver(self.ensemble, build_grid(self.ensemble.dim, self.ensemble.chart, r)).solve(s).kappa
                for r in levels
            ]
            coarse, fine = abs(kappas[1] - kappas[0]), abs(kappas[2] - kappas[1])
            return fine, coarse + 1e-12, fine <= coarse + 1e-12, f"kappa at R={levels}: {kappas}"

        def eigenfunction_form() -> Measure:
            if grid.size > 4096:
                raise _Skip("grid too large for the dense cross-check")
            return _bound(cross_check_rs(self.solution(s)), 5e-3)

        return [
            ("eigen_residual", residual),
            ("eigen_duality", duality),
            ("perturbed_stochastic", stochastic),
            ("lambda_identity", eigenvalue_identity),
            ("variance_from_spectrum", variance),
            ("spectral_gap", gap),
            ("resolution_trend", resolution_trend),
            ("eigenfunction_integral_form", eigenfunction_form),
        ]

    # cumulant

    def _cumulant_checks(self) -> List[Tuple[str, Callable[[], Measure]]]:
        s = self.s_positive
        s_min, s_max = self.s_range

        def at_zero() -> Measure:
            if not s_min < 0 < s_max:
                raise _Skip("0 is outside the model range")
            return _bound(abs(self.model.lam(0.0)), 1e-9)

        def convex() -> Measure:
            probes = np.linspace(s_min, s_max, 103)[1:-1]
            return _bound(-min(self.model.derivative(float(t), 2) for t in probes), 1e-9)

        def involution() -> Measure:
            model = self.model
            span = s_max - s_min
            lo = model.derivative(s_min + 0.1 * span, 1)
            hi = model.derivative(s_max - 0.1 * span, 1)
            rng = self._streams.generator(31)
            worst = 0.0
            for q in rng.uniform(lo, hi, 50):
                point = model.rate_point(model.tilt_for_level(float(q)))
                worst = max(worst, abs(point.lambda_star - point.lambda_star_sup))
            return _bound(worst, 1e-8)

        def hs_routes() -> Measure:
            worst, tested = 0.0, 0
            for l in (-1e-2, -1e-3, -1e-4, 1e-4, 1e-3, 1e-2):
                try:
                    value = self.model.h_s(s, l)
                except OutOfDomainError:
                    continue
                tested += 1
                worst = max(worst, abs(value.series - value.direct) / value.tolerance)
            if not tested:
                raise _Skip("every l is beyond the saddle radius")
            return _bound(worst, 1.0, f"|series - direct| / tolerance over {tested} values of l")

        def saddle() -> Measure:
            worst = 0.0
            for l in (-1e-3, 1e-3):
                try:
                    point = self.model.saddle(s, l)
                except OutOfDomainError:
                    continue
                h = self.model.h_s(s, l).direct
                worst = max(worst, point.residual, abs(self.model.K(s, point.z0) - point.z0 * l + h))
            return _bound(worst, 1e-9)

        def rate_at_mean() -> Measure:
            if not s_min < 0 < s_max:
                raise _Skip("0 is outside the model range")
            return _bound(abs(self.model.legendre(self.model.derivative(0.0, 1))), 1e-9)

        return [
            ("lambda_at_zero", at_zero),
            ("convexity", convex),
            ("legendre_involution", involution),
            ("h_s_routes_agree", hs_routes),
            ("saddle_point", saddle),
            ("rate_vanishes_at_mean", rate_at_mean),
        ]

    # smoothing

    def _smoothing_checks(self) -> List[Tuple[str, Callable[[], Measure]]]:
        kernels = {}

        def kernel(eps: float):
            if eps not in kernels:
                kernels[eps] = build_kernel(eps)
            return kernels[eps]

        def family() -> List[Tuple[PsiDescriptor, float]]:
            members = [
                (PsiDescriptor(kind=PsiKind.UPPER_HALF_LINE, a=0.0), self.s_positive),
                (PsiDescriptor(kind=PsiKind.INTERVAL, a=0.0, delta=1.0), self.s_positive),
            ]
            if self.s_negative is not None:
                members.append((PsiDescriptor(kind=PsiKind.LOWER_HALF_LINE, a=0.0), self.s_negative))
            return members

        def normalized() -> Measure:
            worst = max(abs(kernel(eps).normalization - 1.0) for eps in SANDWICH_EPSILONS)
            return _bound(worst, 1e-6)

        def nonnegative() -> Measure:
            return _bound(-min(float(np.min(kernel(eps).rho_values)) for eps in SANDWICH_EPSILONS), 0.0)

        def support() -> Measure:
            worst = 0.0
            for eps in SANDWICH_EPSILONS:
                k = kernel(eps)
                t = (1.0 / k.width) * (1.0 + np.linspace(1e-9, 1.0, 64))
                worst = max(worst, float(np.max(np.abs(k.transform(np.concatenate([t, -t]))))))
            return _bound(worst, 1e-15)

        def sandwich() -> Measure:
            worst = 0.0
            for eps in SANDWICH_EPSILONS:
                for psi, s in family():
                    worst = max(worst, verify_sandwich(envelopes(psi, s, eps), kernel(eps)).max_violation)
            return _bound(worst, 1e-8)

        def decreasing() -> Measure:
            values = [kernel(eps).c_rho_eps for eps in sorted(SANDWICH_EPSILONS, reverse=True)]
            steps = np.diff(values)
            return float(np.max(steps)), 0.0, bool(np.all(steps < 0)), f"C_rho = {values}"

        def routes() -> Measure:
            psi, s = family()[1]
            env = envelopes(psi, s, SANDWICH_EPSILONS[0])
            x = np.linspace(-2.0, 4.0, 61)
            direct = convolve(env.plus_pieces, kernel(SANDWICH_EPSILONS[0]), x)
            fourier = convolve(env.plus_pieces, kernel(SANDWICH_EPSILONS[0]), x, route="fourier")
            return _bound(float(np.max(np.abs(direct - fourier))), 1e-6)

        return [
            ("kernel_normalized", normalized),
            ("kernel_nonnegative", nonnegative),
            ("kernel_fourier_support", support),
            ("sandwich", sandwich),
            ("c_rho_decreasing", decreasing),
            ("convolution_routes_agree", routes),
        ]

    # montecarlo

    def _montecarlo_checks(self) -> List[Tuple[str, Callable[[], Measure]]]:
        s = self.s_positive
        x = self.start

        def unbiased() -> Measure:
            k = self.ensemble.n_atoms
            n = max(1, min(8, int(math.log(4096) / math.log(k)))) if k > 1 else 8
            q = self.model.derivative(s, 1)
            worst = 0.0
            for functional in (constant_functional(), tail_functional(n * q)):
                exact = exhaustive(self.ensemble, x, n, functional).value
                tilted = exhaustive_tilted(self.ensemble, self.solution(s), x, n, functional).value
                if exact > 0:
                    worst = max(worst, abs(tilted - exact) / exact)
            return _bound(worst, 1e-11, f"n={n}")

        def cocycle() -> Measure:
            kernel = TiltedKernel(self.ensemble, self.solution(s))
            atoms = np.asarray(self.ensemble.atoms, dtype=float)
            rng = self._streams.generator(41)
            quadrant = SphereChart(self.ensemble.chart) == SphereChart.POSITIVE_QUADRANT
            worst = 0.0
            for _ in range(100):
                g1 = np.linalg.multi_dot([atoms[i] for i in rng.integers(0, len(atoms), 3)])
                g2 = np.linalg.multi_dot([atoms[i] for i in rng.integers(0, len(atoms), 3)])
                y = rng.standard_normal(self.ensemble.dim)
                if quadrant:
                    y = np.abs(y) + 1e-3
                y = y / np.linalg.norm(y)
                image = g1 @ y
                split = kernel.density(y, g1, 2) * kernel.density(image / np.linalg.norm(image), g2, 3)
                joint = kernel.density(y, g2 @ g1, 5)
                worst = max(worst, abs(split - joint) / joint)
            return _bound(worst, 1e-12)

        def stochastic() -> Measure:
            kernel = TiltedKernel(self.ensemble, self.solution(s))
            return _bound(float(np.max(np.abs(kernel.node_weights().sum(axis=1) - 1.0))), 1e-10)

        def deterministic() -> Measure:
            kernel = TiltedKernel(self.ensemble, self.solution(s))
            samples = get_settings().block_size + 100
            one = tilted_estimate(kernel, x, 10, constant_functional(), samples, self.seed, workers=1)
            two = tilted_estimate(kernel, x, 10, constant_functional(), samples, self.seed, workers=2)
            return _bound(abs(one.log_value - two.log_value), 0.0, "workers 1 and 2")

        def drift() -> Measure:
            kernel = TiltedKernel(self.ensemble, self.solution(s))
            n = 30
            record = tilted_estimate(kernel, x, n, constant_functional(), 4000, self.seed)
            q = self.model.derivative(s, 1)
            tolerance = 4.0 * record.diagnostics["drift_se"] + 1.0 / n
            return _bound(abs(record.diagnostics["drift"] - q), tolerance, f"q={q}")

        return [
            ("exhaustive_unbiased", unbiased),
            ("kernel_cocycle", cocycle),
            ("kernel_stochastic", stochastic),
            ("seed_determinism", deterministic),
            ("tilted_drift", drift),
        ]

    # predict

    def _predict_checks(self) -> List[Tuple[str, Callable[[], Measure]]]:
        s = self.s_positive
        x = self.start
        n = 100

        def factors() -> Measure:
            prediction = upper_tail_pred(self.solution(s), self.model, x, n)
            worst = abs(prediction.value - prediction.factors.product())
            if prediction.value > 0:
                worst = max(worst, abs(math.log(prediction.value) - prediction.log_value) / abs(prediction.log_value))
            return _bound(worst, 1e-12)

        def lattice() -> Measure:
            solution, model = self.solution(s), self.model
            upper = upper_tail_pred(solution, model, x, n)
            target = target_pred(solution, model, x, n, 0.0, "one", PsiDescriptor(kind=PsiKind.UPPER_HALF_LINE))
            window = llt_pred(solution, model, x, n, 0.0, 0.5, 1.0)
            interval = target_pred(
                solution, model, x, n, 0.0, "one", PsiDescriptor(kind=PsiKind.INTERVAL, a=0.5, delta=1.0)
            )
            return _bound(max(abs(upper.value - target.value), abs(window.value - interval.value)), 0.0)

        def additive() -> Measure:
            solution, model = self.solution(s), self.model
            first = llt_pred(solution, model, x, n, 0.0, 0.0, 0.4).value
            second = llt_pred(solution, model, x, n, 0.0, 0.4, 0.6).value
            joint = llt_pred(solution, model, x, n, 0.0, 0.0, 1.0).value
            return _bound(abs(first + second - joint) / joint, 1e-12)

        return [
            ("factor_recombination", factors),
            ("specialization_lattice", lattice),
            ("llt_additivity", additive),
        ]
