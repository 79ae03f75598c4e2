"""Closed-form right-hand sides of the precise deviation statements.

Every predictor goes through :func:`_predict`, so the tail, lower-tail and
local limit forms are literally the target form with a particular psi.
"""

import math
from typing import Any, Dict, Optional

import numpy as np

from .cumulant import CumulantModel
from .exceptions import OutOfDomainError
from .models import (
    Prediction,
    PredictionFactors,
    PsiDescriptor,
    PsiKind,
    SpectralSolution,
    SphereDirection,
    Theorem,
)
from .montecarlo import PhiSpec, phi_nodes
from .projective import canonical_coords
from .smoothing import psi_integral
from .utils.numerics import safe_exp


def rbar_at(solution: SpectralSolution, x: SphereDirection) -> float:
    """r_s / nu_s(r_s) at x (interpolated when x is off the grid)."""
    coords = canonical_coords(np.asarray(x.coords, dtype=float), x.chart)
    r = solution.grid.interpolate(solution.rbar_s, coords[None, :])[0]
    return float(r / np.dot(solution.nu_s, solution.r_s))


def _predict(
    theorem: Theorem,
    solution: SpectralSolution,
    model: CumulantModel,
    x: SphereDirection,
    n: int,
    l: float,
    psi: PsiDescriptor,
    nu_phi: float = 1.0,
    window: Optional[float] = None,
    x_id: int = 0,
    extra: Optional[Dict[str, Any]] = None,
) -> Prediction:
    s = solution.s
    if s == 0:
        raise OutOfDomainError("predictions need s != 0")
    q = model.derivative(s, 1)
    sigma = math.sqrt(model.sigma2(s))
    lambda_star = model.lambda_star_shift(s, l)
    log_exp_rate = -n * lambda_star
    integral = psi_integral(psi, s)
    factors = PredictionFactors(
        rbar=rbar_at(solution, x),
        exp_rate=safe_exp(log_exp_rate),
        log_exp_rate=log_exp_rate,
        gauss=1.0 / (sigma * math.sqrt(2 * math.pi * n)),
        nu_phi=nu_phi,
        psi_integral=integral,
        window=window,
    )
    log_value = (
        math.log(factors.rbar) + log_exp_rate + math.log(factors.gauss) + math.log(nu_phi) + math.log(integral)
        if nu_phi > 0 and integral > 0
        else -math.inf
    )
    inputs: Dict[str, Any] = {
        "x": np.asarray(x.coords).tolist(),
        "q": q,
        "sigma_s": sigma,
        "lambda_star": lambda_star,
        "psi": psi.label,
    }
    inputs.update(extra or {})
    return Prediction(
        theorem=theorem,
        s=s,
        n=n,
        l=l,
        x_id=x_id,
        inputs=inputs,
        value=factors.product(),
        log_value=log_value,
        factors=factors,
    )


def upper_tail_pred(
    solution: SpectralSolution, model: CumulantModel, x: SphereDirection, n: int, l: float = 0.0, x_id: int = 0
) -> Prediction:
    """rbar_s(x) exp(-n Lambda*(q+l)) / (s sigma_s sqrt(2 pi n)); s < 0 goes to the lower tail."""
    if solution.s < 0:
        return lower_tail_pred(solution, model, x, n, l, x_id)
    psi = PsiDescriptor(kind=PsiKind.UPPER_HALF_LINE, a=0.0)
    return _predict(Theorem.UPPER_TAIL, solution, model, x, n, l, psi, x_id=x_id)


def lower_tail_pred(
    solution: SpectralSolution, model: CumulantModel, x: SphereDirection, n: int, l: float = 0.0, x_id: int = 0
) -> Prediction:
    """rbar_s(x) exp(-n Lambda*(q+l)) / (-s sigma_s sqrt(2 pi n)) for s < 0."""
    if solution.s >= 0:
        raise OutOfDomainError(f"lower tail predictions need s < 0, got s={solution.s}")
    psi = PsiDescriptor(kind=PsiKind.LOWER_HALF_LINE, a=0.0)
    return _predict(Theorem.LOWER_TAIL, solution, model, x, n, l, psi, x_id=x_id)


def target_pred(
    solution: SpectralSolution,
    model: CumulantModel,
    x: SphereDirection,
    n: int,
    l: float,
    phi: PhiSpec,
    psi: PsiDescriptor,
    x_id: int = 0,
) -> Prediction:
    """rbar_s(x) exp(-n Lambda*(q+l)) / (sigma_s sqrt(2 pi n)) nu_s(phi) int e^{-sy} psi(y) dy."""
    nodes = phi_nodes(phi, solution)
    nu_phi = 1.0 if nodes is None else float(np.dot(solution.nu_s, nodes))
    label = phi if isinstance(phi, str) else ("one" if phi is None else "nodes")
    return _predict(Theorem.TARGET, solution, model, x, n, l, psi, nu_phi=nu_phi, x_id=x_id, extra={"phi": label})


def llt_pred(
    solution: SpectralSolution,
    model: CumulantModel,
    x: SphereDirection,
    n: int,
    l: float,
    a: float,
    delta: float,
    x_id: int = 0,
) -> Prediction:
    """Probability that log|G_n x| - n(q+l) falls in [a, a + delta)."""
    if delta <= 0:
        raise OutOfDomainError(f"window length must be positive, got {delta}")
    s = solution.s
    psi = PsiDescriptor(kind=PsiKind.INTERVAL, a=a, delta=delta)
    window = math.exp(-s * a) * -math.expm1(-s * delta)
    return _predict(
        Theorem.LLT, solution, model, x, n, l, psi, window=window, x_id=x_id, extra={"a": a, "delta": delta}
    )


def ldp_rate_pred(model: CumulantModel, s: float) -> float:
    """-Lambda*(Lambda'(s))."""
    return -(s * model.derivative(s, 1) - model.lam(s))


def norm_ldp_pred(model: CumulantModel, s: float, n: int, l: float = 0.0) -> Prediction:
    """exp(-n Lambda*(q)): the comparable quantity for the norm tails."""
    log_exp_rate = n * ldp_rate_pred(model, s)
    factors = PredictionFactors(rbar=1.0, exp_rate=safe_exp(log_exp_rate), log_exp_rate=log_exp_rate, gauss=1.0)
    return Prediction(
        theorem=Theorem.NORM_LOWER_TAIL if s < 0 else Theorem.NORM_TAIL,
        s=s,
        n=n,
        l=l,
        inputs={"q": model.derivative(s, 1), "rate": log_exp_rate / n},
        value=factors.product(),
        log_value=log_exp_rate,
        factors=factors,
    )
