"""Data models for rmldp."""

import json
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    ValidationError,
    model_validator,
)

from .exceptions import ConfigError, EnsembleError


def _as_float_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=float)


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda array: np.asarray(array).tolist(), return_type=list),
]


class EnsembleKind(str, Enum):
    """Class of matrices a law is supported on."""

    INVERTIBLE = "invertible"
    POSITIVE = "positive"


class SphereChart(str, Enum):
    """Which part of the unit sphere directions live on."""

    FULL = "full"
    POSITIVE_QUADRANT = "positive_quadrant"


class EstimateMethod(str, Enum):
    """How an expectation was estimated."""

    EXHAUSTIVE = "exhaustive"
    CRUDE = "crude"
    TILTED = "tilted"


class Theorem(str, Enum):
    """Asymptotic statements the predictors evaluate."""

    UPPER_TAIL = "upper_tail"
    TARGET = "target"
    LOWER_TAIL = "lower_tail"
    LLT = "llt"
    NORM_TAIL = "norm_tail"
    NORM_LOWER_TAIL = "norm_lower_tail"


class PsiKind(str, Enum):
    """Families of target functions on the real line."""

    UPPER_HALF_LINE = "upper_half_line"
    LOWER_HALF_LINE = "lower_half_line"
    INTERVAL = "interval"
    STEP_TABLE = "step_table"
    LINEAR_TABLE = "linear_table"


class LRuleKind(str, Enum):
    """Deviation sequences l_n."""

    FIXED = "fixed"
    SQRT = "sqrt"
    LOG = "log"


class CheckStatus(str, Enum):
    """Outcome of one invariant or acceptance check."""

    PASSED = "passed"
    FAILED = "failed"
    SKIPPED = "skipped"


class CheckMetric(str, Enum):
    """Quantity an acceptance check bounds."""

    RATIO = "ratio"
    CI_CONTAINS = "ci_contains"
    RATE_GAP = "rate_gap"
    TREND = "trend"


class MatrixEnsemble(BaseModel):
    """A finitely supported law on d x d real matrices."""

    model_config = ConfigDict(arbitrary_types_allowed=True, use_enum_values=True)

    dim: int = Field(..., ge=1, description="Matrix dimension d")
    kind: EnsembleKind = Field(..., description="Invertible or positive law")
    atoms: FloatArray = Field(..., description="Stacked atoms, shape (k, d, d)")
    probs: FloatArray = Field(..., description="Atom probabilities, shape (k,)")

    @model_validator(mode="after")
    def _check_well_formed(self) -> "MatrixEnsemble":
        problems = self.problems()
        if problems:
            raise EnsembleError("; ".join(problems))
        return self

    def problems(self, singular_tolerance: float = 1e-14) -> List[str]:
        """Every way in which the law violates its declared shape or kind."""
        found: List[str] = []
        atoms = np.asarray(self.atoms, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if atoms.ndim != 3 or atoms.shape[1] != atoms.shape[2]:
            found.append(f"atoms must be square matrices, got shape {atoms.shape}")
            return found
        if atoms.shape[1] != self.dim:
            found.append(f"atoms are {atoms.shape[1]}x{atoms.shape[2]} but dim={self.dim}")
        if probs.shape != (atoms.shape[0],):
            found.append(f"{probs.size} probabilities for {atoms.shape[0]} atoms")
            return found
        if np.any(probs <= 0):
            found.append("every probability must be strictly positive")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            found.append(f"probabilities sum to {probs.sum():.15g}, not 1")
        if not np.all(np.isfinite(atoms)):
            found.append("atoms contain non-finite entries")
        if self.kind == EnsembleKind.POSITIVE:
            if np.any(atoms < 0):
                found.append("positive law with a negative entry")
            elif not all(is_allowable(g) for g in atoms):
                found.append("positive law with a non-allowable atom")
        else:
            if np.any(np.abs(np.linalg.det(atoms)) < singular_tolerance):
                found.append("invertible law with a singular atom")
        return found

    @property
    def n_atoms(self) -> int:
        return int(np.asarray(self.atoms).shape[0])

    @property
    def chart(self) -> "SphereChart":
        """Sphere chart the law acts on."""
        if self.kind == EnsembleKind.POSITIVE:
            return SphereChart.POSITIVE_QUADRANT
        return SphereChart.FULL

    def to_document(self) -> Dict[str, Any]:
        """JSON document with the CLI field names."""
        return {
            "dim": self.dim,
            "kind": EnsembleKind(self.kind).value,
            "atoms": np.asarray(self.atoms).tolist(),
            "probs": np.asarray(self.probs).tolist(),
        }


def is_allowable(g: np.ndarray) -> bool:
    """Nonnegative with a strictly positive entry in every row and column."""
    g = np.asarray(g, dtype=float)
    return bool(np.all(g >= 0) and np.all((g > 0).any(axis=1)) and np.all((g > 0).any(axis=0)))


class ConditionReport(BaseModel):
    """Heuristic certificates for the standing conditions on a law."""

    allowable: bool = Field(..., description="Every atom is allowable")
    strictly_positive_product_found: bool = Field(..., description="Some product has all entries > 0")
    positive_depth: Optional[int] = Field(None, description="Length of the first such product")
    proximal_product_found: bool = Field(..., description="Some product has a simple dominant eigenvalue")
    proximal_depth: Optional[int] = Field(None, description="Length of the first proximal product")
    nonarithmetic_heuristic: bool = Field(..., description="Two log spectral radii with irrational ratio")
    nonarithmetic_witness: Optional[Tuple[float, float]] = Field(
        None, description="Log spectral radii whose ratio passed the irrationality test"
    )
    search_depth: int = Field(..., description="Longest product searched")
    i_mu_note: str = Field(..., description="Moment interval I_mu")
    lattice_span: Optional[float] = Field(
        None, description="Scalar laws only: span h when every log|a_i| lies on one coset a + hZ"
    )


class SphereDirection(BaseModel):
    """A unit vector on the full sphere or on the positive quadrant."""

    model_config = ConfigDict(arbitrary_types_allowed=True, use_enum_values=True)

    coords: FloatArray = Field(..., description="Unit vector in R^d")
    chart: SphereChart = Field(SphereChart.FULL, description="Chart the direction belongs to")

    @model_validator(mode="after")
    def _check_unit(self) -> "SphereDirection":
        norm = float(np.linalg.norm(self.coords))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"direction has norm {norm!r}, expected 1")
        if self.chart == SphereChart.POSITIVE_QUADRANT and np.any(self.coords < 0):
            raise ValueError("quadrant direction with a negative coordinate")
        return self

    @property
    def dim(self) -> int:
        return int(np.asarray(self.coords).size)


class WalkPath(BaseModel):
    """Directions X_k and cumulative log-gains log|G_k x| of one walk."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    start: SphereDirection
    directions: FloatArray = Field(..., description="X_1 ... X_n, shape (n, d)")
    loggains: FloatArray = Field(..., description="log|G_k x| for k = 1 ... n, in nats")
    atom_indices: Optional[List[int]] = Field(None, description="Atoms drawn at each step")


class SpectralSolution(BaseModel):
    """Eigen-objects of P_s and its adjoint on one sphere grid.

    Normalization: ``nu_s`` is a probability vector and ``nu_s . r_s = 1``,
    so ``rbar_s`` coincides with ``r_s``.  The adjoint pair is normalized the
    same way.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    s: float
    kappa: float
    residual: float
    r_s: FloatArray
    nu_s: FloatArray
    r_s_star: FloatArray
    nu_s_star: FloatArray
    kappa_star: float = Field(..., description="Dominant eigenvalue of the adjoint operator")
    residual_star: float = 0.0
    iterations: int = 0
    gap_estimate: Optional[float] = Field(None, description="Observed contraction ratio of the iteration")
    kappa_dense: Optional[float] = Field(None, description="Dense-solver cross-check")
    grid: Any = Field(None, exclude=True, description="SphereGrid the vectors live on")

    @property
    def rbar_s(self) -> np.ndarray:
        return self.r_s

    def to_document(self) -> Dict[str, Any]:
        """JSON document consumed by the cumulant and Monte Carlo stages."""
        return {
            "s": self.s,
            "kappa": self.kappa,
            "residual": self.residual,
            "nodes": np.asarray(self.grid.nodes).tolist() if self.grid is not None else [],
            "r_s": np.asarray(self.r_s).tolist(),
            "nu_s": np.asarray(self.nu_s).tolist(),
            "r_s_star": np.asarray(self.r_s_star).tolist(),
            "nu_s_star": np.asarray(self.nu_s_star).tolist(),
        }


class PerturbedSpectrum(BaseModel):
    """Dominant eigenvalue of the perturbed operator R_{s,z}."""

    s: float
    z_real: float
    z_imag: float = 0.0
    lambda_real: float
    lambda_imag: float = 0.0
    gap: float = Field(..., description="|second eigenvalue| / |first eigenvalue|")
    iterations: int = 0

    @property
    def z(self) -> complex:
        return complex(self.z_real, self.z_imag)

    @property
    def lambda_sz(self) -> complex:
        return complex(self.lambda_real, self.lambda_imag)


class RatePoint(BaseModel):
    """Legendre data at one tilt s."""

    s: float
    q: float = Field(..., description="Lambda'(s)")
    lambda_star: float = Field(..., description="Lambda*(q)")
    lambda_star_sup: float = Field(..., description="Lambda*(q) from the direct supremum")
    sigma_s: float
    cramer_coeffs: Tuple[float, float, float]
    tolerance: float = Field(1e-8, description="Largest accepted gap between the two Lambda* routes")

    @property
    def agree(self) -> bool:
        return abs(self.lambda_star - self.lambda_star_sup) <= self.tolerance


class SaddlePoint(BaseModel):
    """Real root z0 of K_s'(z) = l."""

    s: float
    l: float
    z0: float
    newton_iters: int
    residual: float


class HsValue(BaseModel):
    """h_s(l) by the Cramer-series route and by the direct Legendre route."""

    s: float
    l: float
    series: float
    direct: float
    tolerance: float

    @property
    def agree(self) -> bool:
        return abs(self.series - self.direct) <= self.tolerance


class PsiDescriptor(BaseModel):
    """A target function psi on the real line.

    ``scale * exp(-tilt * y)`` times the indicator of the family's support;
    tables give their own values instead of the indicator.
    """

    model_config = ConfigDict(use_enum_values=True)

    kind: PsiKind = PsiKind.UPPER_HALF_LINE
    a: float = Field(0.0, description="Left end (or right end for lower half-lines)")
    delta: Optional[float] = Field(None, gt=0, description="Interval length")
    tilt: float = Field(0.0, description="Exponential tilt t in exp(-t y)")
    scale: float = Field(1.0, ge=0, description="Constant factor")
    table_y: Optional[List[float]] = Field(None, description="Table abscissae, increasing")
    table_v: Optional[List[float]] = Field(None, description="Table values, nonnegative")

    @model_validator(mode="after")
    def _check_shape(self) -> "PsiDescriptor":
        if self.kind == PsiKind.INTERVAL and self.delta is None:
            raise ValueError("interval descriptor needs delta")
        if self.kind in (PsiKind.STEP_TABLE, PsiKind.LINEAR_TABLE):
            if not self.table_y or not self.table_v or len(self.table_y) != len(self.table_v):
                raise ValueError("table descriptor needs table_y and table_v of equal length")
            if any(b <= a for a, b in zip(self.table_y, self.table_y[1:])):
                raise ValueError("table_y must be strictly increasing")
            if any(v < 0 for v in self.table_v):
                raise ValueError("table values must be nonnegative")
        return self

    @property
    def label(self) -> str:
        if self.kind == PsiKind.INTERVAL:
            return f"{self.kind}[{self.a:g},{self.a + (self.delta or 0):g})"
        return f"{self.kind}@{self.a:g}"


class SandwichReport(BaseModel):
    """Pointwise check of the smoothing inequalities on a y-grid."""

    epsilon: float
    points: int
    max_upper_violation: float = Field(..., description="max of psi - (1 + C) psi+ * rho, clipped at 0")
    max_lower_violation: float = Field(..., description="max of (psi- * rho - tail) - psi, clipped at 0")
    c_rho: float = Field(..., description="C_rho(eps) from the kernel tail mass")
    c_rho_empirical: float = Field(..., description="Smallest C that works on this grid")

    @property
    def max_violation(self) -> float:
        return max(self.max_upper_violation, self.max_lower_violation)


class EstimateRecord(BaseModel):
    """One enumeration or Monte Carlo estimate."""

    model_config = ConfigDict(use_enum_values=True)

    method: EstimateMethod
    theorem: Optional[Theorem] = None
    s: Optional[float] = None
    n: int
    l: float = 0.0
    x_id: int = 0
    value: float
    log_value: float
    std_error: float = Field(..., ge=0)
    rel_std_error: float = Field(0.0, ge=0)
    n_samples: int
    ci95: Tuple[float, float]
    seed: int = 0
    diagnostics: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_exact(self) -> "EstimateRecord":
        if self.method == EstimateMethod.EXHAUSTIVE and self.std_error != 0.0:
            raise ValueError("exhaustive estimates carry no sampling error")
        return self


class PredictionFactors(BaseModel):
    """Multiplicative breakdown of a prediction.

    ``value = rbar * exp_rate * gauss * nu_phi * psi_integral`` where
    ``gauss = 1 / (sigma_s sqrt(2 pi n))``.  ``window`` repeats the
    e^{-sa}(1 - e^{-s Delta}) part of ``psi_integral`` for local limit rows.
    """

    rbar: float
    exp_rate: float
    log_exp_rate: float
    gauss: float
    nu_phi: float = 1.0
    psi_integral: float = 1.0
    window: Optional[float] = None

    def product(self) -> float:
        return self.rbar * self.exp_rate * self.gauss * self.nu_phi * self.psi_integral


class Prediction(BaseModel):
    """Closed-form right-hand side of one asymptotic statement."""

    model_config = ConfigDict(use_enum_values=True)

    theorem: Theorem
    s: float
    n: int
    l: float = 0.0
    x_id: int = 0
    inputs: Dict[str, Any] = Field(default_factory=dict)
    value: float
    log_value: float
    factors: PredictionFactors


class LRule(BaseModel):
    """Deviation rule: l = sign * c, c/sqrt(n) or c log(n)/n."""

    model_config = ConfigDict(use_enum_values=True)

    kind: LRuleKind = LRuleKind.FIXED
    c: float = 0.0
    signs: List[float] = Field(default_factory=lambda: [1.0])

    def values(self, n: int) -> List[float]:
        if self.kind == LRuleKind.SQRT:
            magnitude = self.c / float(np.sqrt(n))
        elif self.kind == LRuleKind.LOG:
            magnitude = self.c * float(np.log(n)) / n
        else:
            magnitude = self.c
        seen: List[float] = []
        for sign in self.signs:
            value = float(sign * magnitude)
            if value not in seen:
                seen.append(value)
        return seen


class EstimatorSettings(BaseModel):
    """Sampling settings of an experiment."""

    method: str = Field("auto", description="auto, exhaustive, crude or tilted")
    samples: int = Field(10_000, ge=100, description="Monte Carlo sample count N")
    seed: Optional[int] = Field(None, description="Seed; falls back to RMLDP_SEED")
    workers: int = Field(1, ge=1, description="Worker threads")


class WindowSpec(BaseModel):
    """Local limit windows [a, a + Delta)."""

    a: float = 0.0
    deltas: List[float] = Field(default_factory=lambda: [1.0])


class TargetSpec(BaseModel):
    """Target pair (phi, psi) for the target theorem."""

    phi: str = Field("one", description="'one' or 'r_s'")
    psi: PsiDescriptor = Field(default_factory=PsiDescriptor)


class AcceptanceCheck(BaseModel):
    """A pass/fail condition on comparison rows."""

    model_config = ConfigDict(use_enum_values=True)

    name: str
    theorem: Theorem
    metric: CheckMetric = CheckMetric.RATIO
    n: Optional[int] = None
    s: Optional[float] = None
    lo: float = 0.0
    hi: float = float("inf")


class ExperimentConfig(BaseModel):
    """An experiment: ensemble, sweeps, estimators, outputs and checks."""

    model_config = ConfigDict(use_enum_values=True)

    name: str = "experiment"
    ensemble: Path
    s_values: List[float] = Field(default_factory=list)
    q_values: List[float] = Field(default_factory=list, description="Target levels; s from Lambda'(s) = q")
    n_values: List[int]
    l_rule: LRule = Field(default_factory=LRule)
    directions: List[List[float]] = Field(default_factory=list, description="Starting directions x")
    theorems: List[Theorem] = Field(default_factory=lambda: [Theorem.UPPER_TAIL])
    windows: WindowSpec = Field(default_factory=WindowSpec)
    target: TargetSpec = Field(default_factory=TargetSpec)
    estimator: EstimatorSettings = Field(default_factory=EstimatorSettings)
    resolution: Optional[int] = Field(None, ge=16)
    s_range: Optional[Tuple[float, float]] = None
    n_cheb: Optional[int] = Field(None, ge=4)
    output_dir: Path = Path("results")
    checks: List[AcceptanceCheck] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_consistent(self) -> "ExperimentConfig":
        if not self.s_values and not self.q_values:
            raise ValueError("config needs s_values or q_values")
        if any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be positive")
        return self

    @classmethod
    def load(cls, path: Path) -> "ExperimentConfig":
        """Read a JSON config; relative paths are taken from the config's folder."""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            config = cls.model_validate(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, ValidationError) as e:
            raise ConfigError(f"invalid config {path}: {e}") from e
        base = path.parent
        if not config.ensemble.is_absolute():
            config.ensemble = base / config.ensemble
        if not config.ensemble.exists():
            raise ConfigError(f"ensemble file not found: {config.ensemble}")
        return config


class ComparisonRow(BaseModel):
    """Estimate against prediction at one (theorem, n, s, l, x)."""

    theorem: Theorem
    n: int
    s: float
    l: float
    x_id: int
    estimate: EstimateRecord
    prediction: Prediction
    ratio: float
    ratio_ci: Tuple[float, float]
    rate_gap: float = Field(..., description="(log estimate - log prediction) / n")


class InvariantResult(BaseModel):
    """One measured invariant or acceptance check."""

    model_config = ConfigDict(use_enum_values=True)

    name: str
    module: str
    status: CheckStatus
    measured: Optional[float] = None
    tolerance: Optional[float] = None
    detail: str = ""


class VerifyReport(BaseModel):
    """Machine-readable pass/fail report."""

    results: List[InvariantResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(result.status != CheckStatus.FAILED for result in self.results)

    def count(self, status: CheckStatus) -> int:
        return sum(1 for result in self.results if result.status == status)
