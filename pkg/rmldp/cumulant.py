"""Lambda = log kappa and everything derived from it.

The model interpolates log kappa(s) at Chebyshev points of the first kind;
derivatives of every order come from differentiating the interpolant.
"""

import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Chebyshev
from numpy.polynomial.chebyshev import chebpts1
from scipy.optimize import brentq, minimize_scalar

from .config import get_settings
from .exceptions import ConvergenceError, DegenerateVarianceError, OutOfDomainError
from .models import HsValue, MatrixEnsemble, RatePoint, SaddlePoint
from .spectral import SpectralSolver, SphereGrid
from .utils.logging import get_logger
from .utils.rng import map_ordered

logger = get_logger(__name__)

# slack on the range ends for values produced by root finders
_EDGE = 1e-12


class CumulantModel:
    """Chebyshev interpolant of Lambda(s) on [s_min, s_max]."""

    def __init__(
        self,
        s_grid: Sequence[float],
        kappa_values: Sequence[float],
        s_min: float,
        s_max: float,
    ):
        self.s_grid = np.asarray(s_grid, dtype=float)
        self.kappa_values = np.asarray(kappa_values, dtype=float)
        self.s_min = float(s_min)
        self.s_max = float(s_max)
        if np.any(self.kappa_values <= 0):
            raise ConvergenceError("non-positive kappa among the interpolation nodes")
        self._series = Chebyshev.fit(
            self.s_grid,
            np.log(self.kappa_values),
            deg=self.s_grid.size - 1,
            domain=[self.s_min, self.s_max],
        )
        self._derivatives = [self._series] + [self._series.deriv(k) for k in range(1, 6)]

    @property
    def range(self) -> Tuple[float, float]:
        return self.s_min, self.s_max

    def _check(self, s: float) -> None:
        if not (self.s_min - _EDGE <= s <= self.s_max + _EDGE):
            raise OutOfDomainError(f"s={s} outside the model range [{self.s_min}, {self.s_max}]")

    def derivative(self, s: float, order: int = 0) -> float:
        """Lambda^(order)(s) for order 0..5."""
        self._check(s)
        return float(self._derivatives[order](s))

    def lam(self, s: float) -> float:
        return self.derivative(s, 0)

    def cumulants(self, s: float) -> Tuple[float, ...]:
        """(gamma_1 .. gamma_5) = Lambda', ..., Lambda^(5) at s."""
        return tuple(self.derivative(s, k) for k in range(1, 6))

    def sigma2(self, s: float) -> float:
        value = self.derivative(s, 2)
        if value <= 0:
            raise DegenerateVarianceError(f"Lambda''({s}) = {value:.3e} is not positive")
        return value

    def radius(self, s: float) -> float:
        """Saddle radius delta = factor * sigma_s^2 * distance to the range edge."""
        distance = min(s - self.s_min, self.s_max - s)
        return get_settings().saddle_factor * self.sigma2(s) * max(distance, 0.0)

    def K(self, s: float, z: float) -> float:
        """K_s(z) = -q z + Lambda(s + z) - Lambda(s)."""
        return -self.derivative(s, 1) * z + self.lam(s + z) - self.lam(s)

    def cramer_coeffs(self, s: float) -> Tuple[float, float, float]:
        _, g2, g3, g4, g5 = self.cumulants(s)
        if g2 <= 0:
            raise DegenerateVarianceError(f"gamma_2 = {g2:.3e} at s={s}")
        c0 = g3 / (6.0 * g2**1.5)
        c1 = (g4 * g2 - 3.0 * g3**2) / (24.0 * g2**3)
        c2 = (g5 * g2**2 - 10.0 * g4 * g3 * g2 + 15.0 * g3**3) / (120.0 * g2**4.5)
        return c0, c1, c2

    def cramer_series(self, s: float, t: float, order: int = 3) -> float:
        """Truncated Cramer series zeta_s(t) with ``order`` coefficients."""
        if not 1 <= order <= 3:
            raise ValueError(f"Cramer series order must be 1..3, got {order}")
        coefficients = self.cramer_coeffs(s)[:order]
        return float(sum(c * t**k for k, c in enumerate(coefficients)))

    def rate_point(self, s: float, strict: bool = False) -> RatePoint:
        """q = Lambda'(s) and Lambda*(q) = s q - Lambda(s), checked against the supremum.

        The returned point records whether both routes agree; ``strict`` turns a
        disagreement into a ConvergenceError.
        """
        if not self.s_min < s < self.s_max:
            raise OutOfDomainError(f"s={s} is not interior to [{self.s_min}, {self.s_max}]")
        q = self.derivative(s, 1)
        sigma2 = self.sigma2(s)
        closed = s * q - self.lam(s)
        supremum = self._sup_transform(q)
        point = RatePoint(
            s=float(s),
            q=q,
            lambda_star=closed,
            lambda_star_sup=supremum,
            sigma_s=math.sqrt(sigma2),
            cramer_coeffs=self.cramer_coeffs(s),
        )
        if not point.agree:
            if strict:
                raise ConvergenceError(f"Legendre routes disagree at s={s}: {closed!r} against {supremum!r}")
            logger.warning("Legendre transform routes disagree", s=s, closed=closed, sup=supremum)
        return point

    def _sup_transform(self, q: float) -> float:
        """sup_t {t q - Lambda(t)} over the model range."""
        probe = np.linspace(self.s_min, self.s_max, 257)
        values = probe * q - self._series(probe)
        best = int(np.argmax(values))
        lo = probe[max(best - 1, 0)]
        hi = probe[min(best + 1, probe.size - 1)]
        result = minimize_scalar(
            lambda t: -(t * q - float(self._series(t))),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-13},
        )
        return float(max(values[best], -result.fun))

    def tilt_for_level(self, q: float) -> float:
        """The s with Lambda'(s) = q."""
        lo, hi = self.derivative(self.s_min, 1), self.derivative(self.s_max, 1)
        if not lo <= q <= hi:
            raise OutOfDomainError(f"level q={q} outside Lambda'(range) = [{lo:.6g}, {hi:.6g}]")
        if q == lo:
            return self.s_min
        if q == hi:
            return self.s_max
        s = brentq(lambda t: float(self._derivatives[1](t)) - q, self.s_min, self.s_max, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return float(s)

    def legendre(self, q: float) -> float:
        """Lambda*(q) for q in Lambda'(range)."""
        t = self.tilt_for_level(q)
        return t * q - self.lam(t)

    def _solve_shift(self, s: float, l: float, start: float) -> Tuple[float, int, float]:
        """Newton for Lambda'(s + u) = q + l; returns (u, iterations, residual)."""
        q = self.derivative(s, 1)
        u = start
        max_iter = get_settings().newton_max_iter
        for iteration in range(1, max_iter + 1):
            if not self.s_min - _EDGE <= s + u <= self.s_max + _EDGE:
                raise OutOfDomainError(f"Newton iterate s+z={s + u} left the model range")
            residual = self.derivative(s + u, 1) - q - l
            if abs(residual) <= 1e-14:
                return u, iteration - 1, abs(residual)
            step = residual / self.derivative(s + u, 2)
            u -= step
            if abs(step) <= 1e-15 * max(1.0, abs(u)):
                return u, iteration, abs(self.derivative(s + u, 1) - q - l)
        raise ConvergenceError(f"Newton did not converge for s={s}, l={l}", iterations=max_iter)

    def _check_radius(self, s: float, l: float) -> None:
        delta = self.radius(s)
        if abs(l) > delta:
            raise OutOfDomainError(f"|l|={abs(l):.3e} exceeds the saddle radius {delta:.3e} at s={s}")

    def h_s(self, s: float, l: float) -> HsValue:
        """h_s(l) = Lambda*(q+l) - Lambda*(q) - s l by the series and by Newton."""
        self._check_radius(s, l)
        sigma = math.sqrt(self.sigma2(s))
        series = l**2 / (2 * sigma**2) - l**3 / sigma**3 * self.cramer_series(s, l / sigma)
        if l == 0:
            direct = 0.0
        else:
            u, _, _ = self._solve_shift(s, l, l / sigma**2)
            q = self.derivative(s, 1)
            direct = u * (q + l) - (self.lam(s + u) - self.lam(s))
        return HsValue(s=s, l=l, series=series, direct=direct, tolerance=max(1e-8, l**4))

    def saddle(self, s: float, l: float) -> SaddlePoint:
        """Real root z0 of K_s'(z) = l, started from the series inversion."""
        self._check_radius(s, l)
        if l == 0:
            return SaddlePoint(s=s, l=l, z0=0.0, newton_iters=0, residual=0.0)
        g2 = self.derivative(s, 2)
        g3 = self.derivative(s, 3)
        start = l / g2 - g3 * l**2 / (2 * g2**3)
        z0, iterations, residual = self._solve_shift(s, l, start)
        return SaddlePoint(s=s, l=l, z0=z0, newton_iters=iterations, residual=residual)

    def lambda_star_shift(self, s: float, l: float) -> float:
        """Lambda*(q + l) at q = Lambda'(s); beyond the saddle radius via legendre."""
        q = self.derivative(s, 1)
        base = s * q - self.lam(s)
        if l == 0:
            return base
        try:
            return base + s * l + self.h_s(s, l).direct
        except OutOfDomainError:
            return self.legendre(q + l)

    def lambda_expansion(self, s: float, z: float) -> float:
        """1 + sigma_s^2 z^2 / 2 + Lambda'''(s) z^3 / 6."""
        return 1.0 + self.derivative(s, 2) * z**2 / 2 + self.derivative(s, 3) * z**3 / 6

    def lambda_sz(self, s: float, z: float) -> float:
        """exp(K_s(z)) = e^{-qz} kappa(s+z) / kappa(s) from the interpolant."""
        return math.exp(self.K(s, z))

    def table(self, points: Optional[Sequence[float]] = None) -> List[Dict[str, float]]:
        """Rows (s, Lambda, Lambda', Lambda'', Lambda''', Lambda*(Lambda'(s)))."""
        if points is None:
            points = np.linspace(self.s_min, self.s_max, 71)[1:-1]
        rows = []
        for s in points:
            s = float(s)
            lam, d1, d2, d3 = (self.derivative(s, k) for k in range(4))
            rows.append(
                {"s": s, "Lambda": lam, "Lambda1": d1, "Lambda2": d2, "Lambda3": d3, "Lambda_star": s * d1 - lam}
            )
        return rows

    def to_document(self) -> Dict[str, Any]:
        return {
            "s_grid": self.s_grid.tolist(),
            "kappa_values": self.kappa_values.tolist(),
            "range": [self.s_min, self.s_max],
        }

    @classmethod
    def from_document(cls, document: Dict[str, Any]) -> "CumulantModel":
        s_min, s_max = document["range"]
        return cls(document["s_grid"], document["kappa_values"], s_min, s_max)


def chebyshev_nodes(s_min: float, s_max: float, n_cheb: int) -> np.ndarray:
    """Chebyshev points of the first kind mapped to [s_min, s_max], increasing."""
    return 0.5 * (s_min + s_max) + 0.5 * (s_max - s_min) * chebpts1(n_cheb)


def build_model(
    ensemble: MatrixEnsemble,
    grid: SphereGrid,
    s_min: Optional[float] = None,
    s_max: Optional[float] = None,
    n_cheb: Optional[int] = None,
    workers: int = 1,
) -> CumulantModel:
    """Solve kappa(s) at the Chebyshev nodes and interpolate log kappa."""
    settings = get_settings()
    s_min = settings.s_min if s_min is None else s_min
    s_max = settings.s_max if s_max is None else s_max
    n_cheb = n_cheb or settings.n_cheb
    if s_min < -settings.eta0:
        raise OutOfDomainError(f"s_min={s_min} is below -eta0={-settings.eta0}")
    if s_max <= s_min:
        raise OutOfDomainError(f"empty s range [{s_min}, {s_max}]")

    solver = SpectralSolver(ensemble, grid)
    nodes = chebyshev_nodes(s_min, s_max, n_cheb)
    solutions = map_ordered(lambda s: solver.solve(float(s)), list(nodes), workers)
    model = CumulantModel(nodes, [solution.kappa for solution in solutions], s_min, s_max)
    logger.info("built cumulant model", n_cheb=n_cheb, s_min=s_min, s_max=s_max, resolution=grid.resolution)
    return model


def rate_point(model: CumulantModel, s: float, strict: bool = False) -> RatePoint:
    return model.rate_point(s, strict)


def cramer_series(model: CumulantModel, s: float, t: float, order: int = 3) -> float:
    return model.cramer_series(s, t, order)


def h_s(model: CumulantModel, s: float, l: float) -> HsValue:
    return model.h_s(s, l)


def saddle(model: CumulantModel, s: float, l: float) -> SaddlePoint:
    return model.saddle(s, l)


def legendre(model: CumulantModel, q: float) -> float:
    return model.legendre(q)


def tilt_for_level(model: CumulantModel, q: float) -> float:
    return model.tilt_for_level(q)
