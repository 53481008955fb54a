"""
Distance laws, access-event probabilities, coverage and ergodic capacity of
delayed access.

The UE waits up to w for a cell inside the threshold distance r_th. It ends up
in one of three events: IA (an idle cell already inside r_th), DA (a busy or
sleeping cell inside r_th frees up before w) or OA (the budget runs out and the
UE takes the nearest idle cell beyond r_th). Coverage conditions on the serving
distance of each event.

Two evaluation paths:
  - closed form for alpha = 4 without noise,
  - quadrature over the three distance branches for everything else.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

from cellwait.model import AccessScenario, CellwaitError, NetworkConfig, beta_w, dimensionless_area
from cellwait.numerics import (
    DEFAULT_QUADRATURE,
    DomainError,
    QuadratureResult,
    QuadratureSpec,
    integrate,
    interference_constant,
)

logger = logging.getLogger(__name__)

# below this argument (1 - e^-x) / x is taken from its Taylor series
SERIES_THRESHOLD = 1e-6


class DegenerateSupport(CellwaitError, ValueError):
    pass


class WrongRegime(CellwaitError, ValueError):
    pass


class AccessEvent(str, Enum):
    IA = "IA"
    DA = "DA"
    OA = "OA"


class CoverageMethod(str, Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class CoverageResult:
    value: float
    method: CoverageMethod
    error_estimate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise DomainError(f"coverage probability {self.value!r} outside [0, 1]")
        if not self.error_estimate >= 0:
            raise DomainError(f"negative error estimate {self.error_estimate!r}")


class AccessProbabilities(NamedTuple):
    ia: float
    da: float
    oa: float


def _clip_probability(value: float) -> float:
    return min(max(float(value), 0.0), 1.0)


def _one_minus_exp_over(x: float) -> float:
    """(1 - e^-x) / x, continuous at x = 0."""
    if x < SERIES_THRESHOLD:
        return 1.0 - x / 2.0 + x * x / 6.0
    return -math.expm1(-x) / x


def theta(cfg: NetworkConfig, gamma: float) -> float:
    """Interference factor p_A * sqrt(gamma) * pi / 2 of the alpha = 4 closed form."""
    return cfg.p_A * math.sqrt(gamma) * math.pi / 2.0


# ── Access events ──────────────────────────────────────────────────────────────

def access_probabilities(cfg: NetworkConfig, scen: AccessScenario) -> AccessProbabilities:
    v = dimensionless_area(cfg, scen)
    beta0 = cfg.p_I
    betaw = beta_w(cfg, scen.w)
    p_ia = -math.expm1(-beta0 * v)
    p_oa = math.exp(-betaw * v)
    if betaw == beta0:
        p_da = 0.0
        p_oa = 1.0 - p_ia
    else:
        p_da = max(1.0 - p_ia - p_oa, 0.0)
    return AccessProbabilities(p_ia, p_da, p_oa)


def _check_support(cfg: NetworkConfig, scen: AccessScenario, event: AccessEvent, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("distance must be >= 0")
    if event in (AccessEvent.IA, AccessEvent.DA):
        if scen.r_th == 0:
            raise DegenerateSupport(f"{event.value} has empty support when r_th = 0")
        if np.any(r > scen.r_th):
            raise DomainError(f"{event.value} distance must lie in [0, r_th={scen.r_th}]")
    elif np.any(r < scen.r_th):
        raise DomainError(f"OA distance must lie in [r_th={scen.r_th}, inf)")
    if event in (AccessEvent.IA, AccessEvent.OA) and cfg.p_I == 0:
        raise DegenerateSupport(f"{event.value} distance law needs idle cells (p_I = 0)")
    return r


def distance_pdf(cfg: NetworkConfig, scen: AccessScenario, event: AccessEvent, r):
    """Density of the serving distance given the access event (1/m)."""
    event = AccessEvent(event)
    r = _check_support(cfg, scen, event, r)
    idle_density = cfg.p_I * cfg.rho_f * math.pi
    if event is AccessEvent.IA:
        norm = -math.expm1(-idle_density * scen.r_th ** 2)
        return 2.0 * idle_density * r * np.exp(-idle_density * r ** 2) / norm
    if event is AccessEvent.DA:
        return 2.0 * r / scen.r_th ** 2
    return 2.0 * idle_density * r * np.exp(-idle_density * (r ** 2 - scen.r_th ** 2))


def distance_cdf(cfg: NetworkConfig, scen: AccessScenario, event: AccessEvent, r):
    """Distribution function matching distance_pdf on the same support."""
    event = AccessEvent(event)
    r = _check_support(cfg, scen, event, r)
    idle_density = cfg.p_I * cfg.rho_f * math.pi
    if event is AccessEvent.IA:
        return np.expm1(-idle_density * r ** 2) / math.expm1(-idle_density * scen.r_th ** 2)
    if event is AccessEvent.DA:
        return (r / scen.r_th) ** 2
    return -np.expm1(-idle_density * (r ** 2 - scen.r_th ** 2))


# ── Coverage ───────────────────────────────────────────────────────────────────

def conditional_coverage(cfg: NetworkConfig, r, gamma: float):
    """
    P(SINR > gamma | serving distance r) under Rayleigh fading.

    The noise term and the Laplace transform of the active-cell interference
    (integrated from distance 0, closer interferers allowed) multiply.
    """
    r = np.asarray(r, dtype=float)
    noise = cfg.zeta * gamma * r ** cfg.alpha * cfg.sigma2 / cfg.p_tx
    interference = (cfg.p_A * math.pi * cfg.rho_f * r ** 2 * gamma ** (2.0 / cfg.alpha)
                    * interference_constant(cfg.alpha))
    result = np.exp(-(noise + interference))
    return float(result) if result.ndim == 0 else result


def baseline_coverage(cfg: NetworkConfig, gamma: float) -> float:
    """beta_0 / (beta_0 + theta): coverage without delay, or with r_th -> 0 or inf (alpha = 4, no noise)."""
    denominator = cfg.p_I + theta(cfg, gamma)
    return cfg.p_I / denominator if denominator > 0 else 0.0


def coverage_quadrature(cfg: NetworkConfig, scen: AccessScenario, gamma: float,
                        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> CoverageResult:
    if not gamma > 0:
        raise DomainError(f"SINR threshold must be > 0, got {gamma!r}")
    probs = access_probabilities(cfg, scen)
    total, error = 0.0, 0.0

    def branch(event, weight, a, b):
        nonlocal total, error

        def integrand(r):
            return conditional_coverage(cfg, r, gamma) * float(distance_pdf(cfg, scen, event, r))

        value, err = integrate(integrand, a, b, spec)
        total += weight * value
        error += weight * err

    if probs.ia > 0:
        branch(AccessEvent.IA, probs.ia, 0.0, scen.r_th)
    if probs.da > 0:
        branch(AccessEvent.DA, probs.da, 0.0, scen.r_th)
    if probs.oa > 0:
        if cfg.p_I == 0:
            logger.debug(f"No idle cells beyond r_th; OA mass {probs.oa:.3g} counted as outage")
        else:
            branch(AccessEvent.OA, probs.oa, scen.r_th, math.inf)
    return CoverageResult(_clip_probability(total), CoverageMethod.QUADRATURE, error)


def coverage_closed_form(cfg: NetworkConfig, scen: AccessScenario, gamma: float) -> CoverageResult:
    if not cfg.closed_form_regime:
        raise WrongRegime(f"closed form needs alpha = 4 and sigma2 = 0 (alpha={cfg.alpha}, "
                          f"sigma2={cfg.sigma2}); use coverage_quadrature")
    if not gamma > 0:
        raise DomainError(f"SINR threshold must be > 0, got {gamma!r}")
    return CoverageResult(_clip_probability(_closed_form_value(cfg, scen, gamma)),
                          CoverageMethod.CLOSED_FORM, 4 * np.finfo(float).eps)


def closed_form_at_area(beta0: float, betaw: float, theta_: float, v: float) -> float:
    """Closed-form coverage as a function of the dimensionless area v = rho_f * pi * r_th**2."""
    denominator = beta0 + theta_
    base = beta0 / denominator if denominator > 0 else 0.0
    if v == 0 or betaw == beta0:
        return base
    # e^{-b0 v} - e^{-bw v} without cancellation
    released = math.exp(-beta0 * v) * -math.expm1(-(betaw - beta0) * v)
    x = theta_ * v
    bracket = _one_minus_exp_over(x) - base * math.exp(-x)
    return base + released * bracket


def _closed_form_value(cfg: NetworkConfig, scen: AccessScenario, gamma: float) -> float:
    return closed_form_at_area(cfg.p_I, beta_w(cfg, scen.w), theta(cfg, gamma),
                               dimensionless_area(cfg, scen))


def coverage(cfg: NetworkConfig, scen: AccessScenario, gamma: float,
             spec: QuadratureSpec = DEFAULT_QUADRATURE) -> CoverageResult:
    """Closed form where it applies, quadrature otherwise."""
    if cfg.closed_form_regime:
        return coverage_closed_form(cfg, scen, gamma)
    return coverage_quadrature(cfg, scen, gamma, spec)


# ── Capacity ───────────────────────────────────────────────────────────────────

def capacity_from_coverage(coverage_fn: Callable[[float], float],
                           spec: QuadratureSpec = DEFAULT_QUADRATURE,
                           breakpoints: list[float] | None = None) -> QuadratureResult:
    """
    (1 / ln 2) * integral over gamma in (0, inf) of coverage(gamma) / (1 + gamma).

    With u = 1 / (1 + gamma) the weight cancels against the Jacobian and the
    range becomes (0, 1): integrand coverage((1 - u) / u) / u.
    `breakpoints` are gamma values where the coverage function has kinks or jumps.
    """
    def integrand(u):
        return coverage_fn((1.0 - u) / u) / u

    points = [1.0 / (1.0 + g) for g in (breakpoints or []) if g > 0]
    value, error = integrate(integrand, 0.0, 1.0, spec, points)
    return QuadratureResult(value / math.log(2), error / math.log(2))


def capacity_with_error(cfg: NetworkConfig, scen: AccessScenario,
                        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> QuadratureResult:
    if cfg.closed_form_regime:
        def coverage_fn(gamma):
            return _closed_form_value(cfg, scen, gamma)
    else:
        inner = spec.tightened(0.1)

        def coverage_fn(gamma):
            return coverage_quadrature(cfg, scen, gamma, inner).value
    return capacity_from_coverage(coverage_fn, spec)


def capacity(cfg: NetworkConfig, scen: AccessScenario,
             spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Ergodic capacity in bits/s/Hz."""
    return max(capacity_with_error(cfg, scen, spec).value, 0.0)
