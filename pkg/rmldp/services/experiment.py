"""Experiment pipeline: spectral -> cumulant -> estimate -> predict -> compare."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar

import numpy as np

from ..config import get_settings
from ..cumulant import CumulantModel, build_model
from ..ensemble import lattice_span, load_ensemble, validate
from ..exceptions import ConfigError, RmldpError, StageError
from ..models import (
    AcceptanceCheck,
    CheckMetric,
    CheckStatus,
    ComparisonRow,
    EstimateRecord,
    ExperimentConfig,
    InvariantResult,
    MatrixEnsemble,
    Prediction,
    SpectralSolution,
    SphereChart,
    SphereDirection,
    Theorem,
)
from ..montecarlo import (
    Functional,
    TiltedKernel,
    crude_estimate,
    exhaustive,
    interval_functional,
    norm_lower_tail,
    norm_tail,
    phi_nodes,
    tail_functional,
    target_functional,
    tilted_estimate,
)
from ..predict import llt_pred, lower_tail_pred, norm_ldp_pred, target_pred, upper_tail_pred
from ..projective import canonicalize
from ..spectral import SphereGrid, build_grid, solve_with_refinement
from ..utils.csvio import write_csv, write_json
from ..utils.logging import get_logger, run_context

logger = get_logger(__name__)

T = TypeVar("T")

ESTIMATE_COLUMNS = [
    "method", "s", "n", "l", "x_id", "value", "std_error", "n_samples", "seed",
    "theorem", "log_value", "ci_low", "ci_high",
]
PREDICTION_COLUMNS = [
    "theorem", "s", "n", "l", "x_id", "value", "log_value",
    "factor_rbar", "factor_exp_rate", "factor_gauss", "factor_nu_phi", "factor_psi_integral",
]
COMPARISON_COLUMNS = [
    "theorem", "s", "n", "l", "x_id", "delta", "estimate", "prediction",
    "ratio", "ratio_ci_low", "ratio_ci_high", "rate_gap", "method",
]
CUMULANT_COLUMNS = ["s", "Lambda", "Lambda1", "Lambda2", "Lambda3", "Lambda_star"]
PLOT_COLUMNS = ["n", "l", "ratio", "ratio_ci_low", "ratio_ci_high", "rate_gap"]

NEGATIVE_ONLY = {Theorem.LOWER_TAIL, Theorem.NORM_LOWER_TAIL}
POSITIVE_ONLY = {Theorem.UPPER_TAIL, Theorem.NORM_TAIL}
NORM_THEOREMS = {Theorem.NORM_TAIL, Theorem.NORM_LOWER_TAIL}


@dataclass(frozen=True)
class Case:
    """One (theorem, s, n, l, x) point of the sweep."""

    theorem: Theorem
    s: float
    n: int
    l: float
    x_id: int
    delta: Optional[float] = None


@dataclass
class ExperimentReport:
    """What a run produced."""

    cases: List[Case] = field(default_factory=list)
    rows: List[ComparisonRow] = field(default_factory=list)
    checks: List[InvariantResult] = field(default_factory=list)
    files: List[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.status != CheckStatus.FAILED for check in self.checks)


class ExperimentService:
    """Runs one experiment configuration stage by stage."""

    def __init__(
        self,
        config: ExperimentConfig,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        resolution: Optional[int] = None,
        output_dir: Optional[Path] = None,
    ):
        settings = get_settings()
        self.config = config
        self.seed = settings.resolve_seed(seed if seed is not None else config.estimator.seed)
        self.workers = workers or config.estimator.workers or settings.workers
        self.resolution = resolution or config.resolution or settings.resolution
        self.output_dir = Path(output_dir or config.output_dir)
        self._ensemble: Optional[MatrixEnsemble] = None
        self._grid: Optional[SphereGrid] = None
        self._model: Optional[CumulantModel] = None
        self._solutions: Dict[float, SpectralSolution] = {}
        self._kernels: Dict[float, TiltedKernel] = {}
        self._files: List[Path] = []

    def _stage(self, name: str, func: Callable[..., T], *args: Any) -> T:
        logger.info("stage started", stage=name, experiment=self.config.name)
        try:
            result = func(*args)
        except StageError:
            raise
        except (RmldpError, ValueError, ArithmeticError) as e:
            raise StageError(name, e) from e
        logger.info("stage finished", stage=name)
        return result

    @property
    def ensemble(self) -> MatrixEnsemble:
        if self._ensemble is None:
            self._ensemble = self._stage("load", load_ensemble, self.config.ensemble)
            span = lattice_span(self._ensemble)
            if span is not None:
                logger.warning("lattice scalar law: tails oscillate around the non-lattice prediction", span=span)
        return self._ensemble

    @property
    def grid(self) -> SphereGrid:
        if self._grid is None:
            self._grid = build_grid(self.ensemble.dim, self.ensemble.chart, self.resolution)
        return self._grid

    def s_range(self) -> Tuple[float, float]:
        settings = get_settings()
        if self.config.s_range is not None:
            return self.config.s_range
        return settings.s_min, settings.s_max

    @property
    def model(self) -> CumulantModel:
        if self._model is None:
            s_min, s_max = self.s_range()
            self._model = self._stage(
                "cumulant", build_model, self.ensemble, self.grid, s_min, s_max, self.config.n_cheb, self.workers
            )
        return self._model

    def tilts(self) -> List[float]:
        """Configured s values, then the tilts of the configured levels q."""
        tilts = [float(s) for s in self.config.s_values]
        if self.config.q_values:
            tilts += [self._stage("tilt", self.model.tilt_for_level, float(q)) for q in self.config.q_values]
        s_min, s_max = self.s_range()
        for s in tilts:
            if not s_min < s < s_max:
                raise ConfigError(f"s={s} is outside the solver range ({s_min}, {s_max})")
            if s == 0:
                raise ConfigError("s = 0 carries no deviation")
        return tilts

    def solution(self, s: float) -> SpectralSolution:
        if s not in self._solutions:
            self._solutions[s] = self._stage("spectral", solve_with_refinement, self.ensemble, s, self.resolution)
        return self._solutions[s]

    def kernel(self, s: float) -> TiltedKernel:
        if s not in self._kernels:
            self._kernels[s] = TiltedKernel(self.ensemble, self.solution(s))
        return self._kernels[s]

    def directions(self) -> List[SphereDirection]:
        chart = SphereChart(self.ensemble.chart)
        d = self.ensemble.dim
        if self.config.directions:
            vectors = [np.asarray(v, dtype=float) for v in self.config.directions]
        elif chart == SphereChart.POSITIVE_QUADRANT:
            vectors = [np.ones(d)]
        else:
            vectors = [np.eye(d)[0]]
        for v in vectors:
            if v.shape != (d,):
                raise ConfigError(f"direction {v.tolist()} does not have dimension {d}")
        return [canonicalize(v, chart) for v in vectors]

    def cases(self) -> List[Case]:
        """The sweep in a fixed order: theorem, s, n, l, x, window."""
        cases: List[Case] = []
        n_directions = len(self.directions())
        for theorem in [Theorem(t) for t in self.config.theorems]:
            for s in self.tilts():
                if (theorem in POSITIVE_ONLY and s < 0) or (theorem in NEGATIVE_ONLY and s > 0):
                    logger.debug("skipping tilt of the wrong sign", theorem=theorem.value, s=s)
                    continue
                for n in self.config.n_values:
                    for l in self.config.l_rule.values(n):
                        x_ids = [0] if theorem in NORM_THEOREMS else range(n_directions)
                        for x_id in x_ids:
                            if theorem == Theorem.LLT:
                                cases.extend(Case(theorem, s, n, l, x_id, delta) for delta in self.config.windows.deltas)
                            else:
                                cases.append(Case(theorem, s, n, l, x_id))
        return cases

    def _functional(self, case: Case) -> Functional:
        q = self.model.derivative(case.s, 1)
        level = case.n * (q + case.l)
        if case.theorem in (Theorem.UPPER_TAIL, Theorem.NORM_TAIL):
            return tail_functional(level)
        if case.theorem in (Theorem.LOWER_TAIL, Theorem.NORM_LOWER_TAIL):
            return tail_functional(level, lower=True)
        if case.theorem == Theorem.LLT:
            a = self.config.windows.a
            return interval_functional(level + a, level + a + case.delta)
        solution = self.solution(case.s)
        return target_functional(
            self.config.target.psi, level, phi_nodes(self.config.target.phi, solution), solution.grid
        )

    def _method(self, case: Case) -> str:
        method = self.config.estimator.method
        ensemble = self.ensemble
        if case.theorem in NORM_THEOREMS and ensemble.dim > 1:
            # |G x| is not ||G|| off the scalar case
            return "tilted"
        if method != "auto":
            return method
        if ensemble.dim == 1 and 2 <= ensemble.n_atoms <= 3:
            return "exhaustive"
        if ensemble.n_atoms**case.n <= 4096:
            return "exhaustive"
        return "tilted"

    def estimate_case(self, case: Case) -> EstimateRecord:
        x = self.directions()[case.x_id]
        method = self._method(case)
        samples = self.config.estimator.samples
        if method == "exhaustive":
            return exhaustive(self.ensemble, x, case.n, self._functional(case), case.theorem, case.s, case.l, case.x_id)
        if method == "crude":
            return crude_estimate(
                self.ensemble, x, case.n, self._functional(case), samples, self.seed, self.workers,
                case.theorem, case.s, case.l, case.x_id,
            )
        if method != "tilted":
            raise ConfigError(f"unknown estimator method {method!r}")
        q = self.model.derivative(case.s, 1)
        if case.theorem == Theorem.NORM_TAIL:
            return norm_tail(self.ensemble, self.solution(case.s), case.n, q, case.l, samples, self.seed, self.workers)
        if case.theorem == Theorem.NORM_LOWER_TAIL:
            return norm_lower_tail(
                self.ensemble, self.solution(case.s), case.n, q, case.l, samples, self.seed, self.workers
            )
        return tilted_estimate(
            self.kernel(case.s), x, case.n, self._functional(case), samples, self.seed, self.workers,
            case.theorem, case.l, case.x_id,
        )

    def predict_case(self, case: Case) -> Prediction:
        solution = self.solution(case.s)
        model = self.model
        x = self.directions()[case.x_id]
        if case.theorem == Theorem.UPPER_TAIL:
            return upper_tail_pred(solution, model, x, case.n, case.l, case.x_id)
        if case.theorem == Theorem.LOWER_TAIL:
            return lower_tail_pred(solution, model, x, case.n, case.l, case.x_id)
        if case.theorem == Theorem.LLT:
            return llt_pred(solution, model, x, case.n, case.l, self.config.windows.a, case.delta, case.x_id)
        if case.theorem == Theorem.TARGET:
            return target_pred(solution, model, x, case.n, case.l, self.config.target.phi, self.config.target.psi, case.x_id)
        return norm_ldp_pred(model, case.s, case.n, case.l)

    def spectral(self) -> List[SpectralSolution]:
        solutions = [self.solution(s) for s in self.tilts()]
        self._write_json(
            "spectral.json",
            {"resolution": self.resolution, "solutions": [solution.to_document() for solution in solutions]},
        )
        return solutions

    def cumulants(self) -> CumulantModel:
        model = self.model
        self._write_csv("cumulants.csv", CUMULANT_COLUMNS, model.table())
        self._write_json("cumulants.json", model.to_document())
        return model

    def estimates(self, cases: Optional[List[Case]] = None) -> List[EstimateRecord]:
        cases = self.cases() if cases is None else cases
        records = [self._stage("estimate", self.estimate_case, case) for case in cases]
        self._write_csv("estimates.csv", ESTIMATE_COLUMNS, [_estimate_row(r) for r in records])
        return records

    def predictions(self, cases: Optional[List[Case]] = None) -> List[Prediction]:
        cases = self.cases() if cases is None else cases
        predictions = [self._stage("predict", self.predict_case, case) for case in cases]
        self._write_csv("predictions.csv", PREDICTION_COLUMNS, [_prediction_row(p) for p in predictions])
        return predictions

    def compare(self) -> List[ComparisonRow]:
        cases = self.cases()
        estimates = self.estimates(cases)
        predictions = self.predictions(cases)
        rows = [compare_pair(case, e, p) for case, e, p in zip(cases, estimates, predictions)]
        self._write_csv(
            "comparison.csv",
            COMPARISON_COLUMNS,
            [_comparison_row(case, row) for case, row in zip(cases, rows)],
        )
        self._write_plotdata(cases, rows)
        return rows

    def run(self, dry_run: bool = False) -> ExperimentReport:
        """All stages; with ``dry_run`` only the configuration is checked."""
        with run_context(experiment=self.config.name, seed=self.seed):
            return self._run(dry_run)

    def _run(self, dry_run: bool) -> ExperimentReport:
        report = ExperimentReport()
        self._files = []
        validate(self.ensemble)
        if dry_run:
            self.directions()
            s_min, s_max = self.s_range()
            for s in self.config.s_values:
                if not s_min < s < s_max:
                    raise ConfigError(f"s={s} is outside the solver range ({s_min}, {s_max})")
            return report
        self.cumulants()
        self.spectral()
        report.cases = self.cases()
        report.rows = self.compare()
        report.checks = [evaluate_check(check, report.cases, report.rows) for check in self.config.checks]
        self._write_json("checks.json", {"checks": [c.model_dump(mode="json") for c in report.checks]})
        report.files = list(self._files)
        logger.info("experiment finished", experiment=self.config.name, rows=len(report.rows), passed=report.passed)
        return report

    def _record_file(self, path: Path) -> Path:
        self._files.append(path)
        return path

    def _write_csv(self, name: str, columns: List[str], rows: List[Dict[str, Any]]) -> Path:
        return self._record_file(write_csv(self.output_dir / name, columns, rows))

    def _write_json(self, name: str, document: Any) -> Path:
        return self._record_file(write_json(self.output_dir / name, document))

    def _write_plotdata(self, cases: List[Case], rows: List[ComparisonRow]) -> None:
        groups: Dict[Tuple[str, float, float, int, Optional[float]], List[Dict[str, Any]]] = {}
        for case, row in zip(cases, rows):
            sign = math.copysign(1.0, case.l) if case.l != 0 else 0.0
            key = (case.theorem.value, case.s, sign, case.x_id, case.delta)
            groups.setdefault(key, []).append(
                {
                    "n": row.n,
                    "l": row.l,
                    "ratio": row.ratio,
                    "ratio_ci_low": row.ratio_ci[0],
                    "ratio_ci_high": row.ratio_ci[1],
                    "rate_gap": row.rate_gap,
                }
            )
        for index, (key, points) in enumerate(groups.items()):
            theorem, s, sign, x_id, delta = key
            name = f"plotdata/ratio_vs_n_{theorem}_{index:02d}.csv"
            self._write_csv(name, PLOT_COLUMNS, sorted(points, key=lambda p: p["n"]))


def compare_pair(case: Case, estimate: EstimateRecord, prediction: Prediction) -> ComparisonRow:
    """Ratio estimate / prediction, computed in log space."""
    if math.isfinite(estimate.log_value) and math.isfinite(prediction.log_value):
        log_ratio = estimate.log_value - prediction.log_value
        ratio = math.exp(log_ratio)
        rate_gap = log_ratio / case.n
        if estimate.value > 0:
            ratio_ci = (ratio * estimate.ci95[0] / estimate.value, ratio * estimate.ci95[1] / estimate.value)
        else:
            ratio_ci = (ratio, ratio)
    else:
        ratio, rate_gap, ratio_ci = 0.0, -math.inf, (0.0, 0.0)
    return ComparisonRow(
        theorem=case.theorem,
        n=case.n,
        s=case.s,
        l=case.l,
        x_id=case.x_id,
        estimate=estimate,
        prediction=prediction,
        ratio=ratio,
        ratio_ci=ratio_ci,
        rate_gap=rate_gap,
    )


def _matching(check: AcceptanceCheck, cases: List[Case], rows: List[ComparisonRow]) -> List[Tuple[Case, ComparisonRow]]:
    return [
        (case, row)
        for case, row in zip(cases, rows)
        if case.theorem == Theorem(check.theorem)
        and (check.n is None or case.n == check.n)
        and (check.s is None or math.isclose(case.s, check.s))
    ]


def evaluate_check(check: AcceptanceCheck, cases: List[Case], rows: List[ComparisonRow]) -> InvariantResult:
    """Apply one acceptance check to the comparison rows it selects."""
    selected = _matching(check, cases, rows)
    metric = CheckMetric(check.metric)
    if not selected:
        return InvariantResult(name=check.name, module="cli", status=CheckStatus.SKIPPED, detail="no matching rows")
    if metric == CheckMetric.RATIO:
        values = [row.ratio for _, row in selected]
        ok = all(check.lo <= v <= check.hi for v in values)
        measured = max(values, key=lambda v: abs(v - 1.0))
    elif metric == CheckMetric.CI_CONTAINS:
        ok = all(row.ratio_ci[0] <= check.hi and row.ratio_ci[1] >= check.lo for _, row in selected)
        measured = selected[-1][1].ratio
    elif metric == CheckMetric.RATE_GAP:
        values = [row.rate_gap for _, row in selected]
        ok = all(check.lo <= v <= check.hi for v in values)
        measured = max(values, key=abs)
    else:
        measured, ok = _trend(selected, slack=0.0 if math.isinf(check.hi) else check.hi)
    return InvariantResult(
        name=check.name,
        module="cli",
        status=CheckStatus.PASSED if ok else CheckStatus.FAILED,
        measured=measured,
        tolerance=None if metric == CheckMetric.TREND else check.hi,
        detail=f"{metric.value} over {len(selected)} rows",
    )


def _trend(selected: List[Tuple[Case, ComparisonRow]], slack: float) -> Tuple[float, bool]:
    """|ratio - 1| must not grow along n within each (s, sign l, x, window) series."""
    series: Dict[Tuple[float, float, int, Optional[float]], List[Tuple[int, float]]] = {}
    for case, row in selected:
        sign = math.copysign(1.0, case.l) if case.l != 0 else 0.0
        series.setdefault((case.s, sign, case.x_id, case.delta), []).append((case.n, abs(row.ratio - 1.0)))
    worst = 0.0
    for points in series.values():
        points.sort()
        for (_, before), (_, after) in zip(points, points[1:]):
            worst = max(worst, after - before)
    return worst, worst <= slack


def _estimate_row(record: EstimateRecord) -> Dict[str, Any]:
    return {
        "method": record.method,
        "s": record.s,
        "n": record.n,
        "l": record.l,
        "x_id": record.x_id,
        "value": record.value,
        "std_error": record.std_error,
        "n_samples": record.n_samples,
        "seed": record.seed,
        "theorem": record.theorem,
        "log_value": record.log_value,
        "ci_low": record.ci95[0],
        "ci_high": record.ci95[1],
    }


def _prediction_row(prediction: Prediction) -> Dict[str, Any]:
    factors = prediction.factors
    return {
        "theorem": prediction.theorem,
        "s": prediction.s,
        "n": prediction.n,
        "l": prediction.l,
        "x_id": prediction.x_id,
        "value": prediction.value,
        "log_value": prediction.log_value,
        "factor_rbar": factors.rbar,
        "factor_exp_rate": factors.exp_rate,
        "factor_gauss": factors.gauss,
        "factor_nu_phi": factors.nu_phi,
        "factor_psi_integral": factors.psi_integral,
    }


def _comparison_row(case: Case, row: ComparisonRow) -> Dict[str, Any]:
    return {
        "theorem": case.theorem.value,
        "s": row.s,
        "n": row.n,
        "l": row.l,
        "x_id": row.x_id,
        "delta": case.delta,
        "estimate": row.estimate.value,
        "prediction": row.prediction.value,
        "ratio": row.ratio,
        "ratio_ci_low": row.ratio_ci[0],
        "ratio_ci_high": row.ratio_ci[1],
        "rate_gap": row.rate_gap,
        "method": row.estimate.method,
    }
