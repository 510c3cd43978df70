"""Special functions and small nonnegative-matrix linear algebra.

Everything here works on plain floats or small dense numpy arrays (the
Markov chains in this package never exceed 12 states).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConvergenceError",
    "QuadraticCoefficients",
    "regularized_lower_gamma",
    "spectral_radius",
    "stationary_distribution",
    "positive_quadratic_root",
]

_EPS = np.finfo(float).eps
_TINY = 1e-300


class ConvergenceError(RuntimeError):
    """An iterative routine ran out of its iteration budget."""


@dataclass(frozen=True)
class QuadraticCoefficients:
    """Coefficients of ``lam**2 - a*lam - b = 0``.

    ``system_tag`` records which chain ("no_feedback" or "feedback") the
    coefficients were reduced from.
    """

    a: float
    b: float
    system_tag: str


# Stirling-series corrections, lgamma(a) - [(a - 1/2) ln a - a + ln(2 pi)/2].
_STIRLING = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188)


def _stirling_error(a: float) -> float:
    if a < 15.0:
        return math.lgamma(a) - ((a - 0.5) * math.log(a) - a + 0.5 * math.log(2 * math.pi))
    inv = 1.0 / a
    inv2 = inv * inv
    total = 0.0
    power = inv
    for c in _STIRLING:
        total += c * power
        power *= inv2
    return total


def _log_prefactor(x: float, a: float) -> float:
    """ln(x**a * exp(-x) / Gamma(a)), kept accurate for large a near x ~ a."""
    t = (x - a) / a
    if a < 15.0 or t < -0.5:
        # far below the mode the result is tiny and the direct form loses nothing
        return a * math.log(x) - x - math.lgamma(a)
    # a ln x - x - lgamma(a) = -a (t - log1p t) + 0.5 ln(a / 2pi) - stirling_error(a)
    return -a * (t - math.log1p(t)) + 0.5 * math.log(a / (2 * math.pi)) - _stirling_error(a)


def _lower_series(x: float, a: float, max_iter: int) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(max_iter):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(_log_prefactor(x, a))
    raise ConvergenceError(f"incomplete gamma series did not converge (x={x}, a={a})")


def _upper_continued_fraction(x: float, a: float, max_iter: int) -> float:
    # Modified Lentz evaluation of the Legendre continued fraction for Q(a, x).
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * math.exp(_log_prefactor(x, a))
    raise ConvergenceError(f"incomplete gamma continued fraction did not converge (x={x}, a={a})")


def regularized_lower_gamma(x: float, a: float, max_iter: int = 100_000) -> float:
    """Regularized lower incomplete gamma ``P(x, a) = gamma(x, a) / Gamma(a)``.

    The argument order follows the energy-detector formulas, where the
    integration limit comes first. Uses the power series below ``a + 1`` and
    the continued fraction for the complement above it.

    Args:
        x: Upper integration limit, ``x >= 0``.
        a: Shape, ``a > 0``.
        max_iter: Iteration budget for either expansion.

    Returns:
        ``P(x, a)`` in ``[0, 1]``.

    Raises:
        ValueError: ``x < 0`` or ``a <= 0``.
        ConvergenceError: the expansion exhausted ``max_iter``.
    """
    x = float(x)
    a = float(a)
    if not (a > 0.0) or math.isnan(a):
        raise ValueError(f"shape must be positive, got a={a}")
    if not (x >= 0.0):
        raise ValueError(f"x must be nonnegative, got x={x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _lower_series(x, a, max_iter))
    return max(0.0, 1.0 - _upper_continued_fraction(x, a, max_iter))


def _as_square(m) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {arr.shape}")
    return arr


def _power_iteration(m: np.ndarray, tol: float, max_iter: int) -> float | None:
    # Collatz-Wielandt bracket min(Mx/x) <= sp <= max(Mx/x) for positive x.
    x = np.ones(m.shape[0])
    for _ in range(max_iter):
        y = m @ x
        ratios = y / x
        lo = ratios.min()
        if lo <= 0.0:
            # x stays positive, so this is exactly a nonpositive entry of y
            return None
        hi = ratios.max()
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi)
        x = y / hi
    return None


def spectral_radius(m, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Perron root of a square nonnegative matrix.

    Power iteration from the all-ones vector, stopped once the
    Collatz-Wielandt bounds agree to ``tol`` relative. If the iterate loses
    strict positivity (a zero row, or an underflowed MGF) or the budget runs
    out, falls back to the full eigenvalue spectrum from LAPACK's QR
    algorithm.

    Raises:
        ValueError: non-square input or negative entries.
        ConvergenceError: the fallback eigensolver failed as well.
    """
    arr = _as_square(m)
    if np.any(arr < 0.0):
        raise ValueError("spectral_radius expects a nonnegative matrix")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    root = _power_iteration(arr, tol, max_iter)
    if root is not None:
        return float(root)
    try:
        eig = np.linalg.eigvals(arr)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("eigenvalue fallback failed") from exc
    return float(np.max(np.abs(eig)))


def stationary_distribution(m, tol: float = 1e-12) -> np.ndarray:
    """Stationary vector ``pi`` of a row-stochastic matrix, ``pi m = pi``.

    One balance equation is replaced by the normalization ``sum(pi) = 1``
    and the bordered system is solved by LU with partial pivoting.

    Raises:
        ValueError: rows do not sum to one within ``tol``, or the chain has
            more than one closed class so the solution is not unique.
    """
    arr = _as_square(m)
    if np.any(arr < -tol):
        raise ValueError("transition matrix has negative entries")
    row_err = np.max(np.abs(arr.sum(axis=1) - 1.0))
    if row_err > tol:
        raise ValueError(f"matrix is not row-stochastic (max row error {row_err:.3e})")
    n = arr.shape[0]
    system = arr.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("stationary distribution is not unique (reducible chain)") from exc
    if not np.all(np.isfinite(pi)) or np.max(np.abs(pi @ arr - pi)) > 1e-8:
        raise ValueError("stationary distribution is not unique (reducible chain)")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def positive_quadratic_root(q: QuadraticCoefficients) -> float:
    """Positive root ``(a + sqrt(a**2 + 4b)) / 2`` of ``lam**2 - a lam - b``."""
    a, b = float(q.a), float(q.b)
    if a < 0.0 or b < 0.0:
        raise ValueError(f"coefficients must be nonnegative, got a={a}, b={b}")
    if a == 0.0 and b == 0.0:
        raise ValueError("degenerate quadratic: a = b = 0 has only the zero root")
    disc = math.sqrt(a * a + 4.0 * b)
    if a > 0.0:
        return 0.5 * (a + disc)
    return math.sqrt(b)
