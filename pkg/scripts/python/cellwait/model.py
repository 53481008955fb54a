"""
Configuration types shared by every other module.

NetworkConfig holds the cell process and radio parameters, AccessScenario the
threshold distance and delay budget of the tagged UE, PowerModel the per-mode
power draw used by the energy-efficiency metrics. All three are frozen and
validated at construction; powers are linear Watts (dBm is handled by the CLI).
"""

import dataclasses
import math
from dataclasses import dataclass

from scipy.optimize import brentq

# ── Defaults ───────────────────────────────────────────────────────────────────

DEFAULT_RHO_F = 0.005          # cells per m²
DEFAULT_MU = 0.1               # 1/s, mean service time 10 s
DEFAULT_LAMBDA_S = 0.1         # 1/s, mean sleep time 10 s
DEFAULT_ALPHA = 4.0
DEFAULT_P_TX = 10 ** (23 / 10) / 1000      # 23 dBm
DEFAULT_SIGMA2 = 10 ** (-104 / 10) / 1000  # -104 dBm
DEFAULT_ZETA = 1.0
DEFAULT_FRACTIONS = (0.45, 0.10, 0.45)     # (p_A, p_I, p_S)
DEFAULT_R_TH = 10.0            # m
DEFAULT_W = 10.0               # s

FRACTION_SUM_TOL = 1e-12


class CellwaitError(Exception):
    """Base class for every error raised by the cellwait package."""


class ConfigError(CellwaitError, ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        super().__init__(message)

    def __str__(self):
        msg = super().__str__()
        if self.line is not None:
            return f"line {self.line}: {msg}"
        return msg


def _require(condition: bool, key: str, message: str):
    if not condition:
        raise ConfigError(f"{key}: {message}", key=key)


# ── Types ──────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class NetworkConfig:
    rho_f: float = DEFAULT_RHO_F
    p_A: float = DEFAULT_FRACTIONS[0]
    p_I: float = DEFAULT_FRACTIONS[1]
    p_S: float = DEFAULT_FRACTIONS[2]
    mu: float = DEFAULT_MU
    lambda_S: float = DEFAULT_LAMBDA_S
    alpha: float = DEFAULT_ALPHA
    p_tx: float = DEFAULT_P_TX
    sigma2: float = DEFAULT_SIGMA2
    zeta: float = DEFAULT_ZETA

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            _require(isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value),
                     field.name, f"must be a finite number, got {value!r}")
        _require(self.rho_f > 0, "rho_f", "cell density must be > 0")
        _require(self.mu > 0, "mu", "service rate must be > 0")
        _require(self.lambda_S > 0, "lambda_S", "wake-up rate must be > 0")
        _require(self.p_tx > 0, "p_tx", "transmit power must be > 0")
        _require(self.sigma2 >= 0, "sigma2", "noise power must be >= 0")
        _require(self.zeta > 0, "zeta", "fading parameter must be > 0")
        _require(self.alpha > 2, "alpha", "path-loss exponent must be > 2")
        for name in ("p_A", "p_I", "p_S"):
            _require(0.0 <= getattr(self, name) <= 1.0, name, "mode fraction must lie in [0, 1]")
        total = self.p_A + self.p_I + self.p_S
        if abs(total - 1.0) > FRACTION_SUM_TOL:
            raise ConfigError(f"p_A + p_I + p_S must equal 1, got {total!r}", key="p_A")

    @property
    def noise_free(self) -> bool:
        return self.sigma2 == 0.0

    @property
    def closed_form_regime(self) -> bool:
        """True when the closed-form coverage applies (alpha = 4, no noise)."""
        return self.alpha == 4.0 and self.sigma2 == 0.0

    def noiseless(self) -> "NetworkConfig":
        return dataclasses.replace(self, sigma2=0.0)

    def with_fractions(self, p_A: float, p_I: float, p_S: float | None = None) -> "NetworkConfig":
        if p_S is None:
            p_S = 1.0 - p_A - p_I
        return dataclasses.replace(self, p_A=p_A, p_I=p_I, p_S=p_S)

    def with_theta_ratio(self, ratio: float) -> "NetworkConfig":
        """Keep p_A and split the remainder so that p_S / p_I == ratio."""
        _require(ratio >= 0, "theta_ratio", "sleep-to-idle ratio must be >= 0")
        p_I = (1.0 - self.p_A) / (1.0 + ratio)
        return dataclasses.replace(self, p_I=p_I, p_S=1.0 - self.p_A - p_I)


@dataclass(frozen=True)
class AccessScenario:
    r_th: float = DEFAULT_R_TH
    w: float = DEFAULT_W

    def __post_init__(self):
        for name in ("r_th", "w"):
            value = getattr(self, name)
            _require(isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value),
                     name, f"must be a finite number, got {value!r}")
        _require(self.r_th >= 0, "r_th", "threshold distance must be >= 0")
        _require(self.w >= 0, "w", "tolerable delay must be >= 0")


@dataclass(frozen=True)
class PowerModel:
    p_active: float = 7.3
    p_idle: float = 6.8
    p_sleep: float = 4.3
    bandwidth: float = 10e6

    def __post_init__(self):
        for name in ("p_active", "p_idle", "p_sleep", "bandwidth"):
            value = getattr(self, name)
            _require(isinstance(value, (int, float)) and math.isfinite(value) and value > 0,
                     name, "must be a positive finite number")
        _require(self.p_sleep <= self.p_idle, "p_sleep", "sleep power must not exceed idle power")
        _require(self.p_idle <= self.p_active, "p_idle", "idle power must not exceed active power")

    def mean_power(self, cfg: NetworkConfig) -> float:
        return cfg.p_A * self.p_active + cfg.p_I * self.p_idle + cfg.p_S * self.p_sleep

    def scaled(self, factor: float) -> "PowerModel":
        return dataclasses.replace(self, p_active=self.p_active * factor,
                                   p_idle=self.p_idle * factor, p_sleep=self.p_sleep * factor)


# ── Derived quantities ─────────────────────────────────────────────────────────

def beta_w(cfg: NetworkConfig, w: float) -> float:
    """Probability that a cell is available now or becomes available within w."""
    if w < 0:
        raise ConfigError("w: tolerable delay must be >= 0", key="w")
    if w == 0:
        return cfg.p_I
    # p_I plus the two wake-up masses, so beta_w >= p_I also in floating point
    return cfg.p_I + cfg.p_A * -math.expm1(-cfg.mu * w) + cfg.p_S * -math.expm1(-cfg.lambda_S * w)


def dimensionless_area(cfg: NetworkConfig, scen: AccessScenario) -> float:
    """v = rho_f * pi * r_th**2."""
    return cfg.rho_f * math.pi * scen.r_th ** 2


def delay_for_availability(cfg: NetworkConfig, beta: float) -> float:
    """Smallest w >= 0 with beta_w(cfg, w) == beta."""
    if not cfg.p_I <= beta < 1.0:
        raise ConfigError(f"beta_w: target {beta!r} outside [p_I, 1) = [{cfg.p_I}, 1)", key="beta_w")
    if beta == cfg.p_I:
        return 0.0
    if cfg.mu == cfg.lambda_S:
        return math.log((cfg.p_A + cfg.p_S) / (1.0 - beta)) / cfg.mu

    def gap(w):
        return beta_w(cfg, w) - beta

    upper = 1.0 / min(cfg.mu, cfg.lambda_S)
    while gap(upper) < 0:
        upper *= 2.0
    return brentq(gap, 0.0, upper, xtol=1e-14)
