"""
Deterministic numerical kernels: adaptive quadrature, the interference
constant, Gaussian tail functions and closed-form quadratic roots.

Quadrature is QUADPACK through scipy.integrate.quad. Semi-infinite ranges go
to QAGI, which maps [a, inf) onto (0, 1] with x = a + (1 - t) / t before
applying the 21-point Gauss-Kronrod rule, so no truncation point is ever chosen
by hand.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import ndtr

from cellwait.model import CellwaitError, ConfigError

logger = logging.getLogger(__name__)


class DomainError(CellwaitError, ValueError):
    pass


class NonConvergence(CellwaitError, ArithmeticError):
    pass


class NoRealRoot(CellwaitError, ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol: must be > 0", key="rel_tol")
        if not self.abs_tol >= 0:
            raise ConfigError("abs_tol: must be >= 0", key="abs_tol")
        if int(self.max_subdivisions) != self.max_subdivisions or self.max_subdivisions < 1:
            raise ConfigError("max_subdivisions: must be an integer >= 1", key="max_subdivisions")

    def tightened(self, factor: float) -> "QuadratureSpec":
        return QuadratureSpec(rel_tol=self.rel_tol * factor, abs_tol=self.abs_tol * factor,
                              max_subdivisions=self.max_subdivisions)


DEFAULT_QUADRATURE = QuadratureSpec()


class QuadratureResult(NamedTuple):
    value: float
    error: float


def _quad(f, a, b, spec: QuadratureSpec, points=None) -> QuadratureResult:
    with warnings.catch_warnings():
        # failures are read from the message slot of the full output
        warnings.simplefilter("ignore", IntegrationWarning)
        out = quad(f, a, b, epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=spec.max_subdivisions,
                   points=points, full_output=1)
    value, error = float(out[0]), float(out[1])
    if len(out) > 3:
        message = out[3]
        tolerance = max(spec.abs_tol, spec.rel_tol * abs(value))
        if "maximum number of subdivisions" in message or "divergent" in message:
            raise NonConvergence(f"quadrature on [{a}, {b}] did not converge: {message}")
        if not math.isfinite(value) or error > 100 * tolerance:
            raise NonConvergence(f"quadrature on [{a}, {b}] error {error:.3g} above tolerance "
                                 f"{tolerance:.3g}: {message}")
        logger.debug(f"Quadrature on [{a}, {b}] accepted with warning: {message}")
    return QuadratureResult(value, error)


def integrate(f: Callable[[float], float], a: float, b: float,
              spec: QuadratureSpec = DEFAULT_QUADRATURE,
              points: list[float] | None = None) -> QuadratureResult:
    """
    Integrate f over (a, b); b may be math.inf.

    Args:
        f: Real-valued integrand, finite on the open interval.
        a: Lower limit.
        b: Upper limit, finite or inf.
        spec: Tolerances and subdivision budget.
        points: Optional interior break points (kinks, jumps) inside (a, b).

    Returns:
        QuadratureResult with the value and QUADPACK's absolute error estimate.

    Raises:
        NonConvergence: the subdivision budget ran out before the tolerance was met.
    """
    if not a < b:
        raise DomainError(f"integration limits must satisfy a < b, got a={a}, b={b}")
    inner = sorted(p for p in (points or []) if a < p < b)
    if math.isinf(b) and inner:
        head = _quad(f, a, inner[-1], spec, inner[:-1] or None)
        tail = _quad(f, inner[-1], b, spec)
        return QuadratureResult(head.value + tail.value, head.error + tail.error)
    return _quad(f, a, b, spec, inner or None)


def interference_constant(alpha: float) -> float:
    """
    C_alpha = integral over (0, inf) of dz / (1 + z**(alpha/2)) = (2 pi / alpha) / sin(2 pi / alpha).
    """
    if not alpha > 2:
        raise DomainError(f"interference integral diverges for alpha <= 2 (alpha={alpha})")
    if math.isinf(alpha):
        return 1.0
    x = 2.0 * math.pi / alpha
    return x / math.sin(x)


def gaussian_cdf(x):
    """Standard normal CDF, Phi(x)."""
    return ndtr(x)


def gaussian_q(x):
    """Standard normal tail, Q(x) = 1 - Phi(x), evaluated without cancellation."""
    return ndtr(np.negative(x))


def find_root_quadratic(A: float, B: float, C: float) -> tuple[float, ...]:
    """Real roots of A v**2 + B v + C in ascending order (one root for A == 0 or a double root)."""
    if A == 0 and B == 0 and C == 0:
        raise DomainError("all quadratic coefficients are zero")
    if A == 0:
        if B == 0:
            raise NoRealRoot(f"constant equation {C} = 0 has no root")
        return (-C / B,)
    disc = B * B - 4.0 * A * C
    if disc < 0:
        raise NoRealRoot(f"discriminant {disc:.6g} < 0 for ({A}, {B}, {C})")
    if disc == 0:
        return (-B / (2.0 * A),)
    q = -0.5 * (B + math.copysign(math.sqrt(disc), B))
    return tuple(sorted((q / A, C / q)))
