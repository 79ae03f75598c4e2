"""Compact-Fourier smoothing density and the envelopes psi^+ and psi^-.

Target functions are handled as lists of pieces ``(alpha, beta, C, R)``,
each meaning ``C exp(-R y)`` on ``[alpha, beta)``.  Every shipped family is
one piece after multiplication by ``exp(-s y)``, which makes envelopes,
integrals, transforms and convolutions closed-form up to one cumulative
integral of the kernel per exponent R.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import cumulative_simpson, trapezoid
from scipy.interpolate import CubicSpline
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .config import get_settings
from .exceptions import ConvergenceError, DivergentIntegralError, OutOfDomainError
from .models import PsiDescriptor, PsiKind, SandwichReport
from .utils.logging import get_logger

logger = get_logger(__name__)

Piece = Tuple[float, float, float, float]


def varsigma_hat(t: np.ndarray) -> np.ndarray:
    """exp(-1 / (1 - t^2)) on (-1, 1), zero elsewhere."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    out = np.zeros_like(t)
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


class SmoothingKernel:
    """The smoothing kernel rho_width paired with envelopes of radius ``epsilon``.

    ``rho_hat_0`` is the self-convolution of ``varsigma_hat``; the base density
    ``rho = pi * varsigma(v / 2)^2 / rho_hat_0(0)`` has transform
    ``rho_hat_0(2 t) / rho_hat_0(0)`` supported in [-1, 1].  The stored kernel is
    ``rho_width(u) = rho(u / width) / width`` with ``width = epsilon^2``, not
    ``epsilon``: its transform vanishes outside [-1 / epsilon^2, 1 / epsilon^2],
    and ``rho_values``, ``rho_hat_values`` and ``c_rho_eps`` all refer to it.
    """

    def __init__(
        self,
        epsilon: float,
        half_width: Optional[float] = None,
        points: Optional[int] = None,
        quadrature_nodes: Optional[int] = None,
        fourier_points: Optional[int] = None,
    ):
        if not 0 < epsilon <= 1:
            raise OutOfDomainError(f"epsilon must lie in (0, 1], got {epsilon}")
        settings = get_settings()
        self.epsilon = float(epsilon)
        self.width = self.epsilon**2
        half_width = half_width or settings.kernel_half_width
        points = points or settings.kernel_points
        self.fourier_points = fourier_points or settings.fourier_points

        nodes, weights = leggauss(quadrature_nodes or settings.kernel_quadrature_nodes)
        self._nodes = nodes
        self._weights = weights
        self._t01 = 0.5 * (nodes + 1.0)
        self._w01 = 0.5 * weights
        self._sample_hat = varsigma_hat(self._t01)
        self.rho_hat0_at_zero = float(self.rho_hat0(np.array([0.0]))[0])

        self.v_grid = np.linspace(-half_width, half_width, points)
        self.rho_unit = self.unit_density(self.v_grid)
        self.normalization = float(trapezoid(self.rho_unit, self.v_grid))
        if abs(self.normalization - 1.0) > 1e-4:
            raise ConvergenceError(f"smoothing density integrates to {self.normalization:.8f}; grid too coarse")
        self.tail = self._tail_mass(1.0 / self.epsilon, half_width)
        self.c_rho_eps = self.tail / (1.0 - self.tail)
        self._cumulative: Dict[float, CubicSpline] = {}
        logger.debug("built smoothing kernel", epsilon=epsilon, tail=self.tail, normalization=self.normalization)

    def varsigma(self, y: np.ndarray) -> np.ndarray:
        """(1/pi) int_0^1 varsigma_hat(t) cos(t y) dt."""
        y = np.asarray(y, dtype=float)
        return np.cos(np.multiply.outer(y, self._t01)) @ (self._w01 * self._sample_hat) / math.pi

    def rho_hat0(self, u: np.ndarray) -> np.ndarray:
        """varsigma_hat * varsigma_hat by Gauss-Legendre on the overlap of supports."""
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        inside = np.abs(u) < 2.0
        lo = np.maximum(-1.0, u[inside] - 1.0)
        hi = np.minimum(1.0, u[inside] + 1.0)
        half = 0.5 * (hi - lo)
        t = (0.5 * (hi + lo))[:, None] + half[:, None] * self._nodes[None, :]
        integrand = varsigma_hat(t) * varsigma_hat(u[inside][:, None] - t)
        out[inside] = half * (integrand @ self._weights)
        return out

    def unit_density(self, v: np.ndarray) -> np.ndarray:
        return math.pi * self.varsigma(np.asarray(v) / 2.0) ** 2 / self.rho_hat0_at_zero

    def unit_transform(self, t: np.ndarray) -> np.ndarray:
        return self.rho_hat0(2.0 * np.asarray(t, dtype=float)) / self.rho_hat0_at_zero

    def density(self, u: np.ndarray, width: Optional[float] = None) -> np.ndarray:
        width = width or self.width
        return self.unit_density(np.asarray(u) / width) / width

    def transform(self, t: np.ndarray, width: Optional[float] = None) -> np.ndarray:
        width = width or self.width
        return self.unit_transform(width * np.asarray(t, dtype=float))

    @property
    def y_grid(self) -> np.ndarray:
        return self.width * self.v_grid

    @property
    def rho_values(self) -> np.ndarray:
        return self.rho_unit / self.width

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(-1.0 / self.width, 1.0 / self.width, self.fourier_points)

    @property
    def rho_hat_values(self) -> np.ndarray:
        return self.transform(self.t_grid)

    def _tail_mass(self, start: float, stop: float, panels: int = 64) -> float:
        """2 int_start^stop rho(v) dv by composite Gauss-Legendre."""
        edges = np.linspace(start, stop, panels + 1)
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            v = 0.5 * (hi + lo) + half * self._nodes
            total += half * float(np.dot(self._weights, self.unit_density(v)))
        return 2.0 * total

    def cumulative(self, rate: float) -> CubicSpline:
        """u -> int_{-U}^{u} exp(rate w) rho_width(w) dw on the truncated grid."""
        key = float(rate)
        if key not in self._cumulative:
            u = self.y_grid
            values = np.exp(key * u) * self.rho_values
            self._cumulative[key] = CubicSpline(u, cumulative_simpson(values, x=u, initial=0.0))
        return self._cumulative[key]

    def to_rows(self, stride: int = 16) -> List[Dict[str, float]]:
        u = self.y_grid[::stride]
        return [{"u": float(a), "rho": float(b)} for a, b in zip(u, self.rho_values[::stride])]


def build_kernel(epsilon: float, **grid_params) -> SmoothingKernel:
    """SmoothingKernel for envelope radius ``epsilon``."""
    return SmoothingKernel(epsilon, **grid_params)


def base_pieces(psi: PsiDescriptor, s: float = 0.0) -> Optional[List[Piece]]:
    """Pieces of y -> exp(-s y) psi(y); None for linear tables."""
    rate = s + psi.tilt
    kind = PsiKind(psi.kind)
    if kind == PsiKind.UPPER_HALF_LINE:
        return [(psi.a, math.inf, psi.scale, rate)]
    if kind == PsiKind.LOWER_HALF_LINE:
        return [(-math.inf, psi.a, psi.scale, rate)]
    if kind == PsiKind.INTERVAL:
        return [(psi.a, psi.a + psi.delta, psi.scale, rate)]
    if kind == PsiKind.STEP_TABLE:
        y, v = psi.table_y, psi.table_v
        return [(y[k], y[k + 1], psi.scale * v[k], rate) for k in range(len(y) - 1) if v[k] > 0]
    return None


def evaluate_pieces(pieces: Sequence[Piece], y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    for alpha, beta, c, rate in pieces:
        inside = (y >= alpha) & (y < beta)
        out[inside] += c * np.exp(-rate * y[inside])
    return out


def evaluate_psi(psi: PsiDescriptor, y: np.ndarray, s: float = 0.0) -> np.ndarray:
    """exp(-s y) psi(y), vectorized; the lower half-line includes its end point."""
    y = np.asarray(y, dtype=float)
    rate = s + psi.tilt
    kind = PsiKind(psi.kind)
    if kind == PsiKind.LINEAR_TABLE:
        inside = (y >= psi.table_y[0]) & (y <= psi.table_y[-1])
        out = np.zeros_like(y)
        out[inside] = psi.scale * np.interp(y[inside], psi.table_y, psi.table_v) * np.exp(-rate * y[inside])
        return out
    if kind == PsiKind.LOWER_HALF_LINE:
        out = np.zeros_like(y)
        inside = y <= psi.a
        out[inside] = psi.scale * np.exp(-rate * y[inside])
        return out
    return evaluate_pieces(base_pieces(psi, s), y)


def _piece_integral(alpha: float, beta: float, c: float, rate: float) -> float:
    if c == 0 or beta <= alpha:
        return 0.0
    if rate == 0:
        if math.isinf(alpha) or math.isinf(beta):
            raise DivergentIntegralError("untilted indicator of a half-line is not integrable")
        return c * (beta - alpha)
    if (math.isinf(beta) and rate < 0) or (math.isinf(alpha) and rate > 0):
        raise DivergentIntegralError(f"exp(-{rate} y) is not integrable on [{alpha}, {beta})")
    upper = 0.0 if math.isinf(beta) else math.exp(-rate * beta)
    lower = 0.0 if math.isinf(alpha) else math.exp(-rate * alpha)
    return c * (lower - upper) / rate


def pieces_integral(pieces: Sequence[Piece]) -> float:
    return float(sum(_piece_integral(*piece) for piece in pieces))


def _linear_exp_integral(y0: float, y1: float, v0: float, v1: float, rate: float) -> float:
    """int_{y0}^{y1} (linear from v0 to v1) exp(-rate y) dy."""
    if rate == 0:
        return 0.5 * (v0 + v1) * (y1 - y0)
    slope = (v1 - v0) / (y1 - y0)
    e0, e1 = math.exp(-rate * y0), math.exp(-rate * y1)
    return (v0 * e0 - v1 * e1) / rate + slope * (e0 - e1) / rate**2


def psi_integral(psi: PsiDescriptor, s: float) -> float:
    """int exp(-s y) psi(y) dy in closed form."""
    pieces = base_pieces(psi, s)
    if pieces is not None:
        return pieces_integral(pieces)
    rate = s + psi.tilt
    y, v = psi.table_y, psi.table_v
    return psi.scale * sum(_linear_exp_integral(y[k], y[k + 1], v[k], v[k + 1], rate) for k in range(len(y) - 1))


def _plus_pieces(piece: Piece, eps: float) -> List[Piece]:
    alpha, beta, c, rate = piece
    out: List[Piece] = []
    if rate >= 0:
        if not math.isinf(alpha):
            out.append((alpha - eps, alpha + eps, c * math.exp(-rate * alpha), 0.0))
        out.append((alpha + eps, beta + eps, c * math.exp(rate * eps), rate))
    else:
        out.append((alpha - eps, beta - eps, c * math.exp(-rate * eps), rate))
        if not math.isinf(beta):
            out.append((beta - eps, beta + eps, c * math.exp(-rate * beta), 0.0))
    return [p for p in out if p[1] > p[0]]


def _minus_pieces(piece: Piece, eps: float) -> List[Piece]:
    alpha, beta, c, rate = piece
    shift = -rate * eps if rate >= 0 else rate * eps
    lo, hi = alpha + eps, beta - eps
    return [(lo, hi, c * math.exp(shift), rate)] if hi > lo else []


@dataclass
class Envelope:
    """psi^+ and psi^- of radius epsilon for y -> exp(-s y) psi(y)."""

    base: PsiDescriptor
    s: float
    epsilon: float
    y_grid: np.ndarray
    base_pieces: Optional[List[Piece]]
    plus_pieces: List[Piece]
    minus_pieces: List[Piece]
    closed_form: bool = True
    base_values: np.ndarray = field(init=False)
    plus_values: np.ndarray = field(init=False)
    minus_values: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.base_values = evaluate_psi(self.base, self.y_grid, self.s)
        self.plus_values = evaluate_pieces(self.plus_pieces, self.y_grid)
        self.minus_values = evaluate_pieces(self.minus_pieces, self.y_grid)

    @property
    def plus_integral(self) -> float:
        return pieces_integral(self.plus_pieces)

    @property
    def minus_integral(self) -> float:
        return pieces_integral(self.minus_pieces)

    def to_rows(self) -> List[Dict[str, float]]:
        return [
            {"y": float(y), "psi": float(b), "psi_plus": float(p), "psi_minus": float(m)}
            for y, b, p, m in zip(self.y_grid, self.base_values, self.plus_values, self.minus_values)
        ]


def default_y_grid() -> np.ndarray:
    return np.linspace(-5.0, 20.0, 4001)


def envelopes(
    psi: PsiDescriptor,
    s: float,
    epsilon: float,
    y_grid: Optional[np.ndarray] = None,
) -> Envelope:
    """Closed-form envelopes for one-piece families, a sampled sup/inf otherwise."""
    y_grid = default_y_grid() if y_grid is None else np.asarray(y_grid, dtype=float)
    pieces = base_pieces(psi, s)
    if pieces is not None and len(pieces) <= 1:
        plus = [p for piece in pieces for p in _plus_pieces(piece, epsilon)]
        minus = [p for piece in pieces for p in _minus_pieces(piece, epsilon)]
        return Envelope(psi, s, epsilon, y_grid, pieces, plus, minus, closed_form=True)
    plus, minus = _sampled_envelopes(psi, s, epsilon)
    return Envelope(psi, s, epsilon, y_grid, pieces, plus, minus, closed_form=False)


def _sampled_envelopes(psi: PsiDescriptor, s: float, epsilon: float, per_radius: int = 64) -> Tuple[List[Piece], List[Piece]]:
    """Step-function envelopes from sliding extrema on a fine grid (tables only)."""
    y = psi.table_y
    h = epsilon / per_radius
    fine = np.arange(y[0] - 2 * epsilon, y[-1] + 2 * epsilon + h, h)
    fine = np.union1d(fine, np.asarray(y, dtype=float))
    values = evaluate_psi(psi, fine, s)
    # one extra cell either side so the sampled extremum covers the whole ball
    size = 2 * (per_radius + 1) + 1
    upper = maximum_filter1d(values, size=size, mode="constant", cval=0.0)
    lower = minimum_filter1d(values, size=size, mode="constant", cval=0.0)
    plus: List[Piece] = []
    minus: List[Piece] = []
    for j in range(fine.size - 1):
        top = max(upper[j], upper[j + 1])
        bottom = min(lower[j], lower[j + 1])
        if top > 0:
            plus.append((fine[j], fine[j + 1], float(top), 0.0))
        if bottom > 0:
            minus.append((fine[j], fine[j + 1], float(bottom), 0.0))
    return plus, minus


def piece_transform(pieces: Sequence[Piece], t: np.ndarray) -> np.ndarray:
    """Fourier transform int f(y) exp(-i t y) dy of a piecewise-exponential f."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    for alpha, beta, c, rate in pieces:
        if (math.isinf(beta) and rate <= 0) or (math.isinf(alpha) and rate >= 0):
            raise DivergentIntegralError("piece has no Fourier transform as a function")
        z = rate + 1j * t
        upper = 0.0 if math.isinf(beta) else np.exp(-z * beta)
        lower = 0.0 if math.isinf(alpha) else np.exp(-z * alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = c * (lower - upper) / z
        if rate == 0:
            value = np.where(t == 0, c * (beta - alpha), value)
        out += value
    return out


def convolve(
    pieces: Sequence[Piece],
    kernel: SmoothingKernel,
    x: np.ndarray,
    route: str = "direct",
    window: Optional[float] = None,
) -> np.ndarray:
    """(f * rho_width)(x) for piecewise-exponential f.

    ``window`` restricts the kernel variable to |u| < window (direct route
    only).  The Fourier route integrates the transform product over the
    support of the kernel transform with the trapezoid rule.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if route == "fourier":
        if window is not None:
            raise ValueError("the Fourier route cannot restrict the kernel variable")
        t = kernel.t_grid
        product = piece_transform(pieces, t) * kernel.transform(t)
        out = np.empty_like(x)
        for start in range(0, x.size, 256):
            chunk = x[start : start + 256]
            phases = np.exp(1j * np.multiply.outer(chunk, t))
            out[start : start + 256] = np.real(trapezoid(phases * product, t, axis=-1))
        return out / (2 * math.pi)
    if route != "direct":
        raise ValueError(f"unknown convolution route {route!r}")

    u = kernel.y_grid
    lo_limit, hi_limit = u[0], u[-1]
    if window is not None:
        lo_limit, hi_limit = max(lo_limit, -window), min(hi_limit, window)
    out = np.zeros_like(x)
    for alpha, beta, c, rate in pieces:
        cumulative = kernel.cumulative(rate)
        upper = np.clip(x - alpha, lo_limit, hi_limit)
        lower = np.clip(x - beta, lo_limit, hi_limit)
        active = upper > lower
        mass = np.zeros_like(x)
        mass[active] = cumulative(upper[active]) - cumulative(lower[active])
        out += c * np.exp(-rate * x) * mass
    return out


def verify_sandwich(envelope: Envelope, kernel: SmoothingKernel) -> SandwichReport:
    """Check psi^- * rho - tail <= psi <= (1 + C) psi^+ * rho on the envelope grid."""
    x = envelope.y_grid
    psi = envelope.base_values
    upper = convolve(envelope.plus_pieces, kernel, x)
    inner = convolve(envelope.minus_pieces, kernel, x, window=envelope.epsilon)
    upper_gap = psi - (1.0 + kernel.c_rho_eps) * upper
    lower_gap = inner - psi
    positive = psi > 0
    if positive.any():
        with np.errstate(divide="ignore"):
            empirical = float(np.max(psi[positive] / upper[positive]) - 1.0)
    else:
        empirical = 0.0
    report = SandwichReport(
        epsilon=envelope.epsilon,
        points=int(x.size),
        max_upper_violation=float(max(0.0, np.max(upper_gap))),
        max_lower_violation=float(max(0.0, np.max(lower_gap))),
        c_rho=kernel.c_rho_eps,
        c_rho_empirical=max(0.0, empirical),
    )
    logger.debug("sandwich checked", epsilon=envelope.epsilon, violation=report.max_violation)
    return report


def integral_convergence(psi: PsiDescriptor, s: float, epsilons: Sequence[float]) -> Dict[str, object]:
    """int psi^+ and int psi^- as epsilon -> 0 against int exp(-s y) psi(y).

    The limit is estimated by first-order Richardson extrapolation on the two
    smallest radii.
    """
    epsilons = sorted(float(e) for e in epsilons)
    target = psi_integral(psi, s)
    rows = []
    for eps in epsilons:
        env = envelopes(psi, s, eps, y_grid=np.array([0.0]))
        rows.append({"epsilon": eps, "plus": env.plus_integral, "minus": env.minus_integral})
    result: Dict[str, object] = {"target": target, "rows": rows}
    if len(rows) >= 2:
        (e0, r0), (e1, r1) = (epsilons[0], rows[0]), (epsilons[1], rows[1])
        factor = e0 / (e1 - e0)
        for side in ("plus", "minus"):
            extrapolated = r0[side] + factor * (r0[side] - r1[side])
            result[f"{side}_limit"] = extrapolated
            result[f"{side}_error"] = abs(extrapolated - target)
    return result
