"""System parameters, array geometries, and user/scatterer placements."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact

# Sampling annulus and grid used when drawing scenarios.
MIN_DISTANCE_M = 5.0
MAX_DISTANCE_M = 15.0
DISTANCE_STEP_M = 0.1
ANGLE_STEP_RAD = np.deg2rad(0.5)


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of one scenario; single source of truth."""

    carrier_frequency_hz: float = 100e9
    bandwidth_hz: float = 10e9
    num_subcarriers: int = 10
    cyclic_prefix_len: int = 4
    num_antennas: int = 512
    num_ttds_per_chain: int = 32
    num_rf_chains: int = 4
    num_users: int = 4
    transmit_power_watts: float = 0.1     # 20 dBm
    noise_density_dbm_per_hz: float = -174.0
    max_delay_seconds: float = 80e-12
    tx_gain_db: float = 15.0
    rx_gain_db: float = 5.0
    scattering_loss_db: float = -15.0
    absorption_coeff_per_meter: float = 0.0
    num_scatterers_per_user: int = 4

    def __post_init__(self):
        if self.num_antennas % self.num_ttds_per_chain != 0:
            raise ValueError("num_antennas must be divisible by num_ttds_per_chain")
        if self.num_subcarriers < 1 or self.num_users < 1:
            raise ValueError("need at least one subcarrier and one user")
        if self.num_rf_chains < self.num_users:
            raise ValueError("need num_rf_chains >= num_users (one stream per user)")
        if self.max_delay_seconds < 0 or self.transmit_power_watts <= 0:
            raise ValueError("max_delay_seconds must be >= 0 and power > 0")
        if self.bandwidth_hz <= 0 or self.carrier_frequency_hz <= self.bandwidth_hz / 2:
            raise ValueError("need bandwidth > 0 and carrier frequency > bandwidth/2")

    @property
    def subarray_size(self) -> int:
        return self.num_antennas // self.num_ttds_per_chain

    @property
    def noise_power_watts_per_subcarrier(self) -> float:
        density_w = 10.0 ** ((self.noise_density_dbm_per_hz - 30.0) / 10.0)
        return density_w * self.bandwidth_hz / self.num_subcarriers

    @property
    def tx_gain_linear(self) -> float:
        return 10.0 ** (self.tx_gain_db / 10.0)

    @property
    def rx_gain_linear(self) -> float:
        return 10.0 ** (self.rx_gain_db / 10.0)

    @property
    def scattering_loss_linear(self) -> float:
        return 10.0 ** (self.scattering_loss_db / 10.0)

    def with_(self, **kwargs) -> "SystemParams":
        return replace(self, **kwargs)

    def fingerprint(self) -> str:
        text = ",".join(f"{k}={v!r}" for k, v in sorted(vars(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def desk_scale(cls, **overrides) -> "SystemParams":
        """Small system preserving the full-scale physics; practical to optimize.

        Besides shrinking the array, the carrier and bandwidth are rescaled
        so the dimensionless quantities that govern the configuration
        comparisons stay close to their full-scale values: the delay alias
        period of the subcarrier grid M / B (1 ns, exact), the per-antenna
        TTD range relative to the aperture delay t_max c / (N d) (1/16 vs
        1/32), and the serial cascade reach L t_max c / (N d) (1/2 vs 1).
        """
        base = dict(num_antennas=64, num_ttds_per_chain=8, num_rf_chains=2,
                    num_users=2, num_subcarriers=4, cyclic_prefix_len=2,
                    carrier_frequency_hz=25e9, bandwidth_hz=4e9)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class ArrayGeometry:
    """ULA along a line or UCA in the plane containing the users."""

    kind: str                      # "ula" | "uca"
    num_antennas: int
    element_spacing_m: float = 0.0   # ULA
    radius_m: float = 0.0            # UCA

    def __post_init__(self):
        if self.kind not in ("ula", "uca"):
            raise ValueError(f"unknown array kind {self.kind!r}")
        if self.kind == "ula" and self.element_spacing_m <= 0:
            raise ValueError("ULA needs a positive element spacing")
        if self.kind == "uca" and self.radius_m <= 0:
            raise ValueError("UCA needs a positive radius")

    @classmethod
    def ula(cls, params: SystemParams) -> "ArrayGeometry":
        # half-wavelength spacing at the carrier
        d = SPEED_OF_LIGHT / (2.0 * params.carrier_frequency_hz)
        return cls("ula", params.num_antennas, element_spacing_m=d)

    @classmethod
    def uca(cls, params: SystemParams) -> "ArrayGeometry":
        # diameter = N wavelengths: 2R = N c / f_c
        radius = params.num_antennas * SPEED_OF_LIGHT / (2.0 * params.carrier_frequency_hz)
        return cls("uca", params.num_antennas, radius_m=radius)

    @classmethod
    def from_kind(cls, kind: str, params: SystemParams) -> "ArrayGeometry":
        if kind == "ula":
            return cls.ula(params)
        if kind == "uca":
            return cls.uca(params)
        raise ValueError(f"unknown array kind {kind!r}")


@dataclass(frozen=True)
class Placement:
    """Polar position of a user or scatterer relative to the array center."""

    distance_m: float
    angle_rad: float

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError("distance must be positive")


@dataclass(frozen=True)
class Scenario:
    """User and scatterer placements that produced a channel instance."""

    user_placements: tuple[Placement, ...]
    scatterer_placements: tuple[tuple[Placement, ...], ...]  # [user][path]
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.scatterer_placements) != len(self.user_placements):
            raise ValueError("need one scatterer tuple per user")

    @property
    def num_users(self) -> int:
        return len(self.user_placements)


def sample_scenario(params: SystemParams, rng: np.random.Generator,
                    seed: int = 0,
                    r_range: tuple[float, float] = (MIN_DISTANCE_M, MAX_DISTANCE_M),
                    fixed_distance_m: float | None = None) -> Scenario:
    """Draw placements uniformly on the discrete (0.1 m, 0.5 deg) grid.

    ``fixed_distance_m`` pins every user distance (scatterers still sampled),
    as used by the angular-sweep experiments.
    """
    n_r = int(round((r_range[1] - r_range[0]) / DISTANCE_STEP_M)) + 1
    n_th = int(round(np.pi / ANGLE_STEP_RAD)) + 1

    def draw(count: int) -> list[Placement]:
        ri = rng.integers(0, n_r, size=count)
        ti = rng.integers(0, n_th, size=count)
        return [Placement(r_range[0] + DISTANCE_STEP_M * int(a),
                          ANGLE_STEP_RAD * int(b))
                for a, b in zip(ri, ti)]

    users = draw(params.num_users)
    if fixed_distance_m is not None:
        users = [Placement(fixed_distance_m, p.angle_rad) for p in users]
    scatterers = tuple(tuple(draw(params.num_scatterers_per_user))
                       for _ in range(params.num_users))
    return Scenario(tuple(users), scatterers, rng_seed=seed)
