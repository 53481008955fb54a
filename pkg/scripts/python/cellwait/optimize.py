"""
Threshold-distance optimizers and energy-efficiency metrics.

  - optimal_threshold_coverage: coverage-optimal r_th from the Taylor quadratic in
    v = rho_f * pi * r_th**2, selected and polished on the exact closed form.
  - optimal_threshold_rate: rate-optimal r_th by direction-probing bisection on capacity.
  - energy_efficiency / normalized_energy_efficiency: bits/s/Hz per Watt and its gain
    over the zero-delay baseline.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from cellwait.analytic import (
    WrongRegime,
    baseline_coverage,
    capacity,
    capacity_with_error,
    closed_form_at_area,
    coverage_quadrature,
    theta,
)
from cellwait.model import AccessScenario, CellwaitError, NetworkConfig, PowerModel, beta_w
from cellwait.numerics import (
    DEFAULT_QUADRATURE,
    DomainError,
    NonConvergence,
    NoRealRoot,
    QuadratureSpec,
    find_root_quadratic,
)

logger = logging.getLogger(__name__)

# ── Configuration ──────────────────────────────────────────────────────────────

GRID_POINTS = 1000
RATE_UPPER_GAMMA = 1e-3        # "arbitrarily small" threshold used to bound the rate search
DEFAULT_EPSILON = 0.01         # m
TIGHTEN_MARGIN = 100.0         # differences between paired evaluations within this many error estimates get re-integrated
TIGHTEN_FACTOR = 0.01
POLISH_XTOL = 1e-10


class NoInteriorOptimum(CellwaitError, ArithmeticError):
    pass


class InvalidBracket(CellwaitError, ValueError):
    pass


class OptimizationMethod(str, Enum):
    TAYLOR_QUADRATIC = "taylor_quadratic"
    BISECTION = "bisection"
    GRID_ORACLE = "grid_oracle"


@dataclass(frozen=True)
class QuadraticCoefficients:
    A: float
    B: float
    C: float
    degenerate: bool = False

    def roots(self) -> tuple[float, ...]:
        return find_root_quadratic(self.A, self.B, self.C)


@dataclass(frozen=True)
class OptimizationReport:
    r_star: float
    objective_value: float
    method: OptimizationMethod
    iterations: int
    taylor_r_star: float | None = None
    taylor_objective: float | None = None
    root_r: tuple[float, ...] = ()
    root_objectives: tuple[float, ...] = ()
    grid_r_star: float | None = None
    grid_objective: float | None = None
    baseline: float | None = None
    r_upper: float | None = None
    taylor_valid: bool = True
    degenerate: bool = False

    def __post_init__(self):
        if not self.r_star >= 0:
            raise DomainError(f"optimal threshold {self.r_star!r} must be >= 0")
        if self.iterations < 0:
            raise DomainError(f"iteration count {self.iterations!r} must be >= 0")

    @property
    def taylor_gap(self) -> float | None:
        """Relative shortfall of the raw Taylor root against the grid maximum."""
        if self.taylor_objective is None or not self.grid_objective:
            return None
        return (self.grid_objective - self.taylor_objective) / self.grid_objective


def _area_to_radius(cfg: NetworkConfig, v: float) -> float:
    return math.sqrt(max(v, 0.0) / (math.pi * cfg.rho_f))


# ── Generic searches ───────────────────────────────────────────────────────────

def grid_optimum(objective: Callable[[float], float], upper: float, points: int = GRID_POINTS,
                 lower: float = 0.0) -> tuple[float, float]:
    """Exhaustive maximization on an evenly spaced grid; ties go to the smaller argument."""
    if not upper > lower:
        raise InvalidBracket(f"grid needs upper > lower, got [{lower}, {upper}]")
    if points < 2:
        raise DomainError("grid needs at least 2 points")
    grid = np.linspace(lower, upper, points)
    values = np.array([objective(float(x)) for x in grid])
    best = int(np.argmax(values))
    return float(grid[best]), float(values[best])


def bisect_unimodal(objective: Callable[[float], float], lower: float, upper: float,
                    epsilon: float,
                    ascending: Callable[[float, float], bool] | None = None) -> tuple[float, int]:
    """
    Maximize a unimodal objective on [lower, upper] by probing the slope at the midpoint.

    Each step compares the objective at R + epsilon and R - epsilon around the midpoint R
    and keeps the half that rises. The loop stops once the midpoint moves by no more
    than epsilon.

    Args:
        objective: Scalar function to maximize.
        lower: Lower end of the bracket.
        upper: Upper end of the bracket.
        epsilon: Offset of the paired evaluations and stopping tolerance.
        ascending: Optional comparison ascending(right, left) -> True when the objective
            at `right` beats the one at `left`; replaces direct evaluation of `objective`.

    Returns:
        (argmax estimate, iterations)
    """
    if not epsilon > 0:
        raise InvalidBracket(f"epsilon must be > 0, got {epsilon!r}")
    if not upper - lower > epsilon:
        raise InvalidBracket(f"bracket [{lower}, {upper}] is not wider than epsilon={epsilon}")
    if ascending is None:
        def ascending(right, left):
            return objective(right) > objective(left)

    lo, hi = lower, upper
    delta = hi - lo
    iterations = 0
    while delta > epsilon:
        mid = (lo + hi) / 2.0
        if ascending(mid + epsilon, max(mid - epsilon, lower)):
            lo = mid
        else:
            hi = mid
        delta = abs(mid - (lo + hi) / 2.0)
        iterations += 1
    return (lo + hi) / 2.0, iterations


def _polish(objective: Callable[[float], float], lower: float, upper: float):
    result = minimize_scalar(lambda x: -objective(x), bounds=(lower, upper), method="bounded",
                             options={"xatol": POLISH_XTOL * max(upper, 1.0)})
    return float(result.x), -float(result.fun), int(result.nit)


# ── Coverage-optimal threshold ─────────────────────────────────────────────────

def quadratic_coefficients(beta0: float, betaw: float, theta_: float) -> QuadraticCoefficients:
    """A v**2 + B v + C from the second-order expansion of the coverage derivative."""
    if not 0 < beta0 <= betaw <= 1:
        raise DomainError(f"need 0 < beta0 <= betaw <= 1, got beta0={beta0}, betaw={betaw}")
    if not theta_ > 0:
        raise DomainError(f"theta must be > 0, got {theta_!r}")
    s0 = beta0 + theta_
    sw = betaw + theta_
    A = beta0 * (s0 ** 2 / 2.0 + sw ** 3 / (2.0 * s0))
    B = 1.5 * (beta0 - betaw) * (beta0 + betaw + theta_) - beta0 * (s0 + sw ** 2 / s0)
    C = 2.0 * (betaw - beta0) + beta0 * (1.0 + sw / s0)
    return QuadraticCoefficients(A, B, C, degenerate=betaw == beta0)


def _area_scale(beta0: float, betaw: float, theta_: float) -> float:
    # where the released mass e^{-b0 v} - e^{-bw v} peaks, or the interference scale
    if beta0 > 0:
        peak = math.log(betaw / beta0) / (betaw - beta0)
    else:
        peak = 1.0 / betaw
    return 4.0 * max(peak, 1.0 / (betaw + theta_))


def optimal_threshold_coverage(cfg: NetworkConfig, w: float, gamma: float,
                               grid_points: int = GRID_POINTS,
                               fallback: bool = True) -> OptimizationReport:
    """
    Coverage-optimal threshold distance for alpha = 4 without noise.

    The printed quadratic gives the candidate roots; the better one by exact evaluation
    seeds a bounded scalar search on the exact closed form, checked against a grid.
    Without a positive root the grid optimum is polished instead and the report says the
    Taylor approximation is out of range (or NoInteriorOptimum is raised when
    `fallback` is False).
    """
    if not cfg.closed_form_regime:
        raise WrongRegime("coverage-optimal threshold needs alpha = 4 and sigma2 = 0")
    if not gamma > 0:
        raise DomainError(f"SINR threshold must be > 0, got {gamma!r}")
    beta0 = cfg.p_I
    betaw = beta_w(cfg, w)
    theta_ = theta(cfg, gamma)
    base = baseline_coverage(cfg, gamma)

    if betaw == beta0:
        return OptimizationReport(r_star=0.0, objective_value=base,
                                  method=OptimizationMethod.TAYLOR_QUADRATIC, iterations=0,
                                  baseline=base, degenerate=True)

    def objective(v):
        return closed_form_at_area(beta0, betaw, theta_, v)

    upper = _area_scale(beta0, betaw, theta_)
    grid_v, grid_p = grid_optimum(objective, upper, grid_points)
    cell = upper / (grid_points - 1)

    candidates: tuple[float, ...] = ()
    try:
        candidates = tuple(v for v in quadratic_coefficients(beta0, betaw, theta_).roots() if v > 0)
    except (NoRealRoot, DomainError) as exc:
        logger.debug(f"Taylor quadratic unusable: {exc}")
    root_objectives = tuple(objective(v) for v in candidates)

    if not candidates:
        if not fallback:
            raise NoInteriorOptimum(f"Taylor quadratic has no positive root (beta0={beta0}, "
                                    f"betaw={betaw}, theta={theta_})")
        logger.warning(f"Taylor quadratic has no positive root at gamma={gamma:.4g}; using the grid optimum")
        v_star, p_star, nit = _polish(objective, max(grid_v - cell, 0.0), grid_v + cell)
        if p_star < grid_p:
            v_star, p_star = grid_v, grid_p
        return OptimizationReport(r_star=_area_to_radius(cfg, v_star), objective_value=p_star,
                                  method=OptimizationMethod.GRID_ORACLE, iterations=nit,
                                  grid_r_star=_area_to_radius(cfg, grid_v), grid_objective=grid_p,
                                  baseline=base, taylor_valid=False)

    best = max(range(len(candidates)), key=lambda i: (root_objectives[i], -candidates[i]))
    taylor_v = candidates[best]
    larger = [v for v in candidates if v > taylor_v]
    bracket_upper = larger[0] if larger else max(upper, 2.0 * taylor_v)
    v_star, p_star, nit = _polish(objective, 0.0, bracket_upper)
    if p_star < grid_p - 1e-12:
        logger.warning(f"Search seeded by the Taylor root missed the grid optimum at gamma={gamma:.4g} "
                       f"({p_star:.6f} < {grid_p:.6f}); refining around the grid point")
        v_star, p_star, extra = _polish(objective, max(grid_v - cell, 0.0), grid_v + cell)
        nit += extra
        if p_star < grid_p:
            v_star, p_star = grid_v, grid_p

    return OptimizationReport(
        r_star=_area_to_radius(cfg, v_star),
        objective_value=p_star,
        method=OptimizationMethod.TAYLOR_QUADRATIC,
        iterations=nit,
        taylor_r_star=_area_to_radius(cfg, taylor_v),
        taylor_objective=root_objectives[best],
        root_r=tuple(_area_to_radius(cfg, v) for v in candidates),
        root_objectives=root_objectives,
        grid_r_star=_area_to_radius(cfg, grid_v),
        grid_objective=grid_p,
        baseline=base,
    )


# ── Rate-optimal threshold ─────────────────────────────────────────────────────

def default_rate_upper(cfg: NetworkConfig, w: float, gamma: float = RATE_UPPER_GAMMA) -> float:
    """Coverage-optimal r_th at a very small SINR threshold, the bracket for the rate search."""
    if cfg.alpha == 4.0:
        return optimal_threshold_coverage(cfg.noiseless(), w, gamma).r_star
    noiseless = cfg.noiseless()
    r0 = 1.0 / math.sqrt(cfg.rho_f * math.pi)

    def objective(r):
        return coverage_quadrature(noiseless, AccessScenario(r_th=r, w=w), gamma).value

    r_star, _ = grid_optimum(objective, 20.0 * r0, 200)
    return r_star


def optimal_threshold_rate(cfg: NetworkConfig, w: float, r_upper: float | None = None,
                           epsilon: float = DEFAULT_EPSILON,
                           spec: QuadratureSpec = DEFAULT_QUADRATURE) -> OptimizationReport:
    """
    Rate-optimal threshold distance by bisection on the ergodic capacity.

    Evaluation pairs whose capacity difference is within TIGHTEN_MARGIN error estimates are
    re-integrated at TIGHTEN_FACTOR times the tolerance before the direction is decided.
    """
    if not epsilon > 0:
        raise InvalidBracket(f"epsilon must be > 0, got {epsilon!r}")

    def capacity_at(r):
        return capacity(cfg, AccessScenario(r_th=r, w=w), spec)

    if beta_w(cfg, w) == cfg.p_I:
        logger.info("No delay budget (beta_w = p_I): capacity does not depend on r_th")
        return OptimizationReport(r_star=0.0, objective_value=capacity_at(0.0),
                                  method=OptimizationMethod.BISECTION, iterations=0,
                                  r_upper=r_upper, degenerate=True)
    if r_upper is None:
        r_upper = default_rate_upper(cfg, w)
        logger.debug(f"Rate search bracket [0, {r_upper:.4f}] m")
    if not r_upper > epsilon:
        raise InvalidBracket(f"r_upper={r_upper} must exceed epsilon={epsilon}")

    tight = spec.tightened(TIGHTEN_FACTOR)

    def ascending(right, left):
        a = capacity_with_error(cfg, AccessScenario(r_th=right, w=w), spec)
        b = capacity_with_error(cfg, AccessScenario(r_th=left, w=w), spec)
        if abs(a.value - b.value) <= TIGHTEN_MARGIN * (a.error + b.error):
            try:
                a = capacity_with_error(cfg, AccessScenario(r_th=right, w=w), tight)
                b = capacity_with_error(cfg, AccessScenario(r_th=left, w=w), tight)
            except NonConvergence as exc:
                logger.debug(f"Tightened evaluation did not converge, keeping default tolerance: {exc}")
        return a.value > b.value

    r_star, iterations = bisect_unimodal(capacity_at, 0.0, r_upper, epsilon, ascending)
    return OptimizationReport(r_star=r_star, objective_value=capacity_at(r_star),
                              method=OptimizationMethod.BISECTION, iterations=iterations,
                              r_upper=r_upper)


# ── Energy efficiency ──────────────────────────────────────────────────────────

def energy_efficiency(cfg: NetworkConfig, scen: AccessScenario, pm: PowerModel = PowerModel(),
                      spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Capacity over bandwidth times the mode-weighted mean power."""
    return capacity(cfg, scen, spec) / (pm.bandwidth * pm.mean_power(cfg))


def normalized_energy_efficiency(cfg: NetworkConfig, scen: AccessScenario,
                                 spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    if scen.w == 0:
        return 1.0
    baseline = capacity(cfg, dataclasses.replace(scen, w=0.0), spec)
    if baseline == 0:
        raise DomainError("zero-delay capacity is 0 (no idle cells), normalization undefined")
    return capacity(cfg, scen, spec) / baseline
