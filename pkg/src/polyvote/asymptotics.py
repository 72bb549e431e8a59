"""Closed-form and numerically solved growth objects for the volume chain.

The volume grows like ``((1 + alpha) t) ** (1 / (1 + alpha))``. Exponential
tail bounds hold outside the two roots of the rate function

    f(lam) = (1 + alpha) lam log(lam) - (1 + alpha) lam + lam ** -alpha,

and for ``alpha = 1`` a two-scale refinement tightens both roots.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

__all__ = [
    "NumericalError",
    "RateFunctionReport",
    "ImprovedBoundsReport",
    "rate_function",
    "rate_roots",
    "rate_report",
    "growth_constant",
    "fluid_path",
    "tail_bound",
    "split_lambda",
    "split_exponent",
    "improved_bounds_alpha1",
]

class NumericalError(ArithmeticError):
    """Root bracketing or another numerical step failed."""


@dataclass(frozen=True)
class RateFunctionReport:
    alpha: float
    lambda_minus: float
    lambda_plus: float
    growth_constant: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ImprovedBoundsReport:
    theta_lower: float
    lambda_minus_improved: float
    theta_upper: float
    lambda_plus_improved: float

    def to_dict(self) -> dict:
        return asdict(self)


def rate_function(lam: float, alpha: float) -> float:
    if lam <= 0:
        raise ValueError(f"rate function is defined for lambda > 0, got {lam}")
    a1 = 1.0 + alpha
    return a1 * lam * math.log(lam) - a1 * lam + lam ** (-alpha)


def growth_constant(alpha: float) -> float:
    """Limit of ``N_t / t ** (1 / (1 + alpha))``."""
    return (1.0 + alpha) ** (1.0 / (1.0 + alpha))


def fluid_path(u, alpha: float):
    """``X_u = ((1 + alpha) u) ** (1 / (1 + alpha))``, solving ``X' = X ** -alpha``."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0):
        raise ValueError("fluid path is defined for u >= 0")
    out = ((1.0 + alpha) * u) ** (1.0 / (1.0 + alpha))
    return float(out) if out.ndim == 0 else out


def rate_roots(alpha: float) -> tuple[float, float]:
    """Both roots ``(lambda_minus, lambda_plus)`` of the rate function.

    For ``alpha = 0`` the function touches zero only at 1, returned as a
    double root.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return 1.0, 1.0
    f = lambda x: rate_function(x, alpha)  # noqa: E731
    lo, hi = 1e-6, 10.0 * (1.0 + alpha)
    res = optimize.minimize_scalar(f, bracket=(lo, growth_constant(alpha), hi), method="golden", tol=1e-10)
    x_min = float(res.x)
    if not (lo < x_min < hi) or f(x_min) >= 0:
        raise NumericalError(f"no sign change around minimiser {x_min} (f={f(x_min)})")
    if f(lo) <= 0 or f(hi) <= 0:
        raise NumericalError(f"bracket ends not positive: f({lo})={f(lo)}, f({hi})={f(hi)}")
    lam_minus = optimize.bisect(f, lo, x_min, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    lam_plus = optimize.bisect(f, x_min, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(lam_minus), float(lam_plus)


def rate_report(alpha: float) -> RateFunctionReport:
    lm, lp = rate_roots(alpha)
    return RateFunctionReport(alpha, lm, lp, growth_constant(alpha))


def tail_bound(lam: float, alpha: float, t: int, epsilon: float) -> float | None:
    """Asymptotic bound ``exp(-(1 - eps) f(lam) t**(1/(1+alpha)))``.

    Below ``lambda_minus`` it bounds ``P(N_t < lam t**(1/(1+alpha)))``, above
    ``lambda_plus`` it bounds ``P(N_t > lam t**(1/(1+alpha)))``. Returns
    ``None`` inside the gap where no bound is available.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    lm, lp = rate_roots(alpha)
    if lm <= lam <= lp:
        return None
    return math.exp(-(1.0 - epsilon) * rate_function(lam, alpha) * t ** (1.0 / (1.0 + alpha)))


# Two-scale refinement, alpha = 1 only. The inner split point is a = theta*lam.


def split_lambda(theta):
    """Level at which the two exponential pieces of the split bound balance."""
    theta = np.asarray(theta, dtype=np.float64)
    ent = math.log(2.0) + theta * np.log(theta) + (1.0 - theta) * np.log1p(-theta)
    out = np.sqrt(theta / (2.0 * (1.0 - theta) * ent))
    return float(out) if out.ndim == 0 else out


def split_exponent(theta: float) -> float:
    """Coefficient of ``sqrt(t)`` in the split bound, evaluated at ``split_lambda(theta)``."""
    lam = split_lambda(theta)
    return 2.0 * lam * math.log(lam) - 2.0 * lam + 0.5 / lam + 0.5 / ((1.0 - theta) * lam)


def improved_bounds_alpha1(grid: int = 4000) -> ImprovedBoundsReport:
    """Roots of :func:`split_exponent` on (0, 1/2) and the levels they give.

    The smaller root tightens ``lambda_minus(1)``, the larger one
    ``lambda_plus(1)``. Exactly two sign changes are expected.
    """
    eps = 1e-9
    thetas = np.linspace(eps, 0.5 - 1e-6, grid)
    vals = np.array([split_exponent(th) for th in thetas])
    flips = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if flips.size != 2:
        raise NumericalError(f"expected two sign changes of the split exponent, found {flips.size}: {thetas[flips]}")
    roots = [
        optimize.bisect(split_exponent, thetas[i], thetas[i + 1], xtol=1e-14, maxiter=500) for i in flips
    ]
    t1, t2 = sorted(float(r) for r in roots)
    return ImprovedBoundsReport(t1, split_lambda(t1), t2, split_lambda(t2))
