"""Propagation model: configuration, link classes, powers, fading, shadowing.

Lengths are in km, powers in watts and gains linear; dB values only appear
in :class:`NetworkConfig` fields and are converted on access.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple

import numpy as np

__all__ = [
    "ValidationError",
    "DegenerateDistance",
    "OutOfRange",
    "Scenario",
    "Direction",
    "NodeKind",
    "LinkClass",
    "LinkParams",
    "NetworkConfig",
    "TransformedIntensities",
    "dbm_to_watts",
    "dbi_to_linear",
    "lognormal_fractional_moment",
    "transform_intensities",
    "link_params",
    "sample_fading",
    "sample_shadowing",
    "received_power_dl",
    "received_power_ul",
    "speed_to_density",
]


class ValidationError(ValueError):
    """A configuration value violates a model invariant."""


class DegenerateDistance(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class Scenario(str, enum.Enum):
    LOS = "LOS"
    NLOS = "NLOS"


class Direction(str, enum.Enum):
    UL = "UL"
    DL = "DL"


class NodeKind(str, enum.Enum):
    MBS = "MBS"
    SBS_TYPICAL = "SBS_TYPICAL"  # SBS on the typical road
    SBS_OTHER = "SBS_OTHER"


class LinkClass(str, enum.Enum):
    VM = "VM"    # vehicle - MBS
    VST = "VST"  # vehicle - SBS, same road
    VSO = "VSO"  # vehicle - SBS, other road


def _as_scenario(value) -> Scenario:
    if isinstance(value, Scenario):
        return value
    return Scenario(str(value).upper())


# (alpha_s, m_s0, m_v0) per scenario
_SCENARIO_DEFAULTS = {
    Scenario.LOS: (2.0, 2, 2),
    Scenario.NLOS: (4.0, 1, 1),
}


@dataclass(frozen=True)
class NetworkConfig:
    """Physical and statistical parameters of one network scenario.

    Defaults reproduce the system-parameter table for the LOS scenario.
    The MBS, SBS and vehicle densities are not tabulated; they default to
    lambda_m = 5 /km^2, lambda_s = 10 /km (ratio 2) and lambda_v = 15 /km.
    """

    lambda_m: float = 5.0
    lambda_l: float = 10.0
    lambda_s: float = 10.0
    lambda_v: float = 15.0
    p_m_dbm: float = 46.0
    p_s_dbm: float = 20.0
    p_v_dbm: float = 20.0
    g_m_dbi: float = 0.0
    g_s0_dbi: float = 0.0
    g_s1_dbi: float = -20.0
    g_v0_dbi: float = 0.0
    g_v1_dbi: float = -20.0
    alpha_m: float = 4.0
    alpha_s: float = 2.0
    m_m: int = 1
    m_s0: int = 2
    m_s1: int = 1
    m_v0: int = 2
    m_v1: int = 1
    shadow_std_m_db: float = 4.0
    shadow_std_s0_db: float = 2.0
    shadow_std_s1_db: float = 4.0
    shadow_mean_m_db: float = 0.0
    shadow_mean_s0_db: float = 0.0
    shadow_mean_s1_db: float = 0.0
    v_max_kmh: float = 120.0
    lambda_max_per_km: float = 63.0
    scenario: Scenario = Scenario.LOS
    region_radius_km: float = 3.0
    noise_power: float = 0.0

    @classmethod
    def for_scenario(cls, scenario: Scenario | str, **overrides) -> "NetworkConfig":
        """Config whose alpha_s, m_s0 and m_v0 follow the LOS/NLOS table entries."""
        scenario = _as_scenario(scenario)
        alpha_s, m_s0, m_v0 = _SCENARIO_DEFAULTS[scenario]
        base = dict(scenario=scenario, alpha_s=alpha_s, m_s0=m_s0, m_v0=m_v0)
        base.update(overrides)
        return cls(**base)

    def __post_init__(self):
        if not isinstance(self.scenario, Scenario):
            object.__setattr__(self, "scenario", _as_scenario(self.scenario))
        self.validate()

    def validate(self) -> None:
        for name in ("lambda_m", "lambda_l", "lambda_s", "lambda_v"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValidationError(f"{f.name} must be finite")
        for name in ("m_m", "m_s0", "m_s1", "m_v0", "m_v1"):
            v = getattr(self, name)
            if int(v) != v or not 1 <= v <= 4:
                raise ValidationError(f"{name} must be an integer Nakagami shape in 1..4")
        if not self.alpha_m > 2:
            raise ValidationError("alpha_m must be > 2")
        if not self.alpha_s >= 2:
            raise ValidationError("alpha_s must be >= 2")
        for name in ("shadow_std_m_db", "shadow_std_s0_db", "shadow_std_s1_db"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not self.region_radius_km > 0:
            raise ValidationError("region_radius_km must be > 0")
        if self.noise_power < 0:
            raise ValidationError("noise_power must be >= 0")
        if not (self.v_max_kmh > 0 and self.lambda_max_per_km >= 0):
            raise ValidationError("v_max_kmh must be > 0 and lambda_max_per_km >= 0")
        if not self.a_ms > self.b_ms:
            raise ValidationError(
                f"a_ms > b_ms violated (a_ms={self.a_ms:.6g}, b_ms={self.b_ms:.6g})"
            )

    def replace(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)

    # linear-unit views
    @property
    def p_m(self) -> float:
        return dbm_to_watts(self.p_m_dbm)

    @property
    def p_s(self) -> float:
        return dbm_to_watts(self.p_s_dbm)

    @property
    def p_v(self) -> float:
        return dbm_to_watts(self.p_v_dbm)

    @property
    def g_m(self) -> float:
        return dbi_to_linear(self.g_m_dbi)

    @property
    def g_s0(self) -> float:
        return dbi_to_linear(self.g_s0_dbi)

    @property
    def g_s1(self) -> float:
        return dbi_to_linear(self.g_s1_dbi)

    @property
    def g_v0(self) -> float:
        return dbi_to_linear(self.g_v0_dbi)

    @property
    def g_v1(self) -> float:
        return dbi_to_linear(self.g_v1_dbi)

    @property
    def a_ms(self) -> float:
        """DL power ratio P_M G_M / (P_S G_S0)."""
        return self.p_m * self.g_m / (self.p_s * self.g_s0)

    @property
    def b_ms(self) -> float:
        """UL gain ratio G_V1 / G_V0."""
        return self.g_v1 / self.g_v0


@dataclass(frozen=True)
class TransformedIntensities:
    """Densities of the displaced (shadowing-free) point processes.

    ``lambda_V_m`` and ``lambda_Va_m`` are the vehicle densities seen by an
    MBS receiver (shadowing chi_M, exponent alpha_M).
    """

    lambda_M: float
    lambda_S: float
    lambda_V: float
    lambda_Sa: float
    lambda_Va: float
    lambda_V_m: float
    lambda_Va_m: float

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValidationError(f"{f.name} must be >= 0")


def dbm_to_watts(p_dbm):
    out = 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)
    return float(out) if out.ndim == 0 else out


def dbi_to_linear(g_dbi):
    out = 10.0 ** (np.asarray(g_dbi, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


_DB_TO_NEPER = math.log(10.0) / 10.0


def lognormal_fractional_moment(sigma_db: float, alpha: float, dims: int, mean_db: float = 0.0) -> float:
    """E[chi^(-dims/alpha)] for 10 log10(chi) ~ Normal(mean_db, sigma_db^2)."""
    if sigma_db < 0 or alpha <= 0:
        raise ValueError("need sigma_db >= 0 and alpha > 0")
    if dims not in (1, 2):
        raise ValueError("dims must be 1 or 2")
    delta = dims / alpha
    mu = mean_db * _DB_TO_NEPER
    s = sigma_db * _DB_TO_NEPER
    return math.exp(-delta * mu + 0.5 * (delta * s) ** 2)


def transform_intensities(config: NetworkConfig) -> TransformedIntensities:
    c = config
    moment_m2 = lognormal_fractional_moment(c.shadow_std_m_db, c.alpha_m, 2, c.shadow_mean_m_db)
    moment_m1 = lognormal_fractional_moment(c.shadow_std_m_db, c.alpha_m, 1, c.shadow_mean_m_db)
    moment_s0 = lognormal_fractional_moment(c.shadow_std_s0_db, c.alpha_s, 1, c.shadow_mean_s0_db)
    moment_s1 = lognormal_fractional_moment(c.shadow_std_s1_db, c.alpha_s, 2, c.shadow_mean_s1_db)
    line_density = math.pi * c.lambda_l
    return TransformedIntensities(
        lambda_M=moment_m2 * c.lambda_m,
        lambda_S=moment_s0 * c.lambda_s,
        lambda_V=moment_s0 * c.lambda_v,
        lambda_Sa=moment_s1 * line_density * c.lambda_s,
        lambda_Va=moment_s1 * line_density * c.lambda_v,
        lambda_V_m=moment_m1 * c.lambda_v,
        lambda_Va_m=moment_m2 * line_density * c.lambda_v,
    )


class LinkParams(NamedTuple):
    power: float  # transmit power, W
    gain: float
    alpha: float
    m: int
    shadow_std_db: float
    shadow_mean_db: float


def link_params(config: NetworkConfig, link: LinkClass, direction: Direction) -> LinkParams:
    """Transmit power, gain, pathloss, fading and shadowing of one link class.

    UL links into an MBS use the vehicle side lobe G_V1, alpha_M, m_V1 and
    chi_M; UL links into an SBS use G_V0/m_V0 on the same road and
    G_V1/m_V1 from other roads.
    """
    c = config
    link = LinkClass(link)
    direction = Direction(direction)
    if direction is Direction.DL:
        table = {
            LinkClass.VM: (c.p_m, c.g_m, c.alpha_m, c.m_m, c.shadow_std_m_db, c.shadow_mean_m_db),
            LinkClass.VST: (c.p_s, c.g_s0, c.alpha_s, c.m_s0, c.shadow_std_s0_db, c.shadow_mean_s0_db),
            LinkClass.VSO: (c.p_s, c.g_s1, c.alpha_s, c.m_s1, c.shadow_std_s1_db, c.shadow_mean_s1_db),
        }
    else:
        table = {
            LinkClass.VM: (c.p_v, c.g_v1, c.alpha_m, c.m_v1, c.shadow_std_m_db, c.shadow_mean_m_db),
            LinkClass.VST: (c.p_v, c.g_v0, c.alpha_s, c.m_v0, c.shadow_std_s0_db, c.shadow_mean_s0_db),
            LinkClass.VSO: (c.p_v, c.g_v1, c.alpha_s, c.m_v1, c.shadow_std_s1_db, c.shadow_mean_s1_db),
        }
    return LinkParams(*table[link])


def sample_fading(m: int, rng: np.random.Generator, size=None):
    """Nakagami-m power gain: Gamma(shape=m, scale=1/m), unit mean."""
    if int(m) != m or m < 1:
        raise ValueError("Nakagami shape must be a positive integer")
    return rng.gamma(m, 1.0 / m, size)


def sample_shadowing(std_db: float, rng: np.random.Generator, size=None, mean_db: float = 0.0):
    """Log-normal shadowing gain chi with 10 log10(chi) ~ Normal(mean_db, std_db^2)."""
    return 10.0 ** (rng.normal(mean_db, std_db, size) / 10.0)


def _power(p, g, alpha, distance, fading, shadow):
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise DegenerateDistance("transmitter co-located with receiver")
    out = p * g * np.asarray(fading) * np.asarray(shadow) * distance ** (-alpha)
    return float(out) if np.ndim(out) == 0 else out


_DL_CLASS = {
    NodeKind.MBS: LinkClass.VM,
    NodeKind.SBS_TYPICAL: LinkClass.VST,
    NodeKind.SBS_OTHER: LinkClass.VSO,
}


def received_power_dl(tx: NodeKind, distance, fading, shadow, config: NetworkConfig):
    """Received DL power at a vehicle from a transmitter of kind ``tx``."""
    lp = link_params(config, _DL_CLASS[NodeKind(tx)], Direction.DL)
    return _power(lp.power, lp.gain, lp.alpha, distance, fading, shadow)


def received_power_ul(
    serving: NodeKind, distance, fading, shadow, config: NetworkConfig, same_road: bool = True
):
    """Received UL power at a BS of kind ``serving`` from a vehicle.

    An MBS always sees the vehicle side lobe with alpha_M; an SBS sees the
    main lobe (alpha_S) from its own road and the side lobe from others.
    """
    serving = NodeKind(serving)
    if serving is NodeKind.MBS:
        link = LinkClass.VM
    else:
        link = LinkClass.VST if same_road else LinkClass.VSO
    lp = link_params(config, link, Direction.UL)
    return _power(lp.power, lp.gain, lp.alpha, distance, fading, shadow)


def speed_to_density(v: float, config: NetworkConfig) -> float:
    """Vehicle density (nodes/km) at speed ``v`` km/h under the Greenshields law."""
    if not 0.0 <= v <= config.v_max_kmh:
        raise OutOfRange(f"speed {v} km/h outside [0, {config.v_max_kmh}]")
    return config.lambda_max_per_km * (1.0 - v / config.v_max_kmh)
