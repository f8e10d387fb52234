"""Spherical-wave near-field wideband channel generation.

All responses follow the exact per-antenna distance model, so the array
response is frequency dependent and carries the wavefront curvature for
both ULA and UCA layouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import SPEED_OF_LIGHT, ArrayGeometry, Placement, Scenario, SystemParams


class DegeneratePlacementError(ValueError):
    """A placement sits essentially on top of an antenna element."""


def subcarrier_frequency(m: int, params: SystemParams) -> float:
    """Frequency of the m-th subcarrier (1-based): f_c + B(2m-1-M)/(2M)."""
    M = params.num_subcarriers
    if not 1 <= m <= M:
        raise IndexError(f"subcarrier index {m} outside 1..{M}")
    return params.carrier_frequency_hz + params.bandwidth_hz * (2 * m - 1 - M) / (2 * M)


def subcarrier_frequencies(params: SystemParams) -> np.ndarray:
    m = np.arange(1, params.num_subcarriers + 1)
    return (params.carrier_frequency_hz
            + params.bandwidth_hz * (2 * m - 1 - params.num_subcarriers)
            / (2 * params.num_subcarriers))


def element_distances(geom: ArrayGeometry, p: Placement) -> np.ndarray:
    """Distance from every antenna element to the placement point."""
    r, theta = p.distance_m, p.angle_rad
    if geom.kind == "ula":
        n = np.arange(1, geom.num_antennas + 1)
        delta = n - 1 - (geom.num_antennas - 1) / 2.0
        d = geom.element_spacing_m
        sq = r * r + (delta * d) ** 2 - 2.0 * r * delta * d * np.cos(theta)
    else:
        n = np.arange(1, geom.num_antennas + 1)
        psi = 2.0 * np.pi * n / geom.num_antennas
        R = geom.radius_m
        sq = r * r + R * R - 2.0 * r * R * np.cos(theta - psi)
    return np.sqrt(np.maximum(sq, 0.0))


def element_distance(geom: ArrayGeometry, p: Placement, n: int) -> float:
    """Distance from antenna n (0-based) to the placement point."""
    if not 0 <= n < geom.num_antennas:
        raise IndexError(f"antenna index {n} outside 0..{geom.num_antennas - 1}")
    return float(element_distances(geom, p)[n])


def array_response(geom: ArrayGeometry, f: float, p: Placement) -> np.ndarray:
    """b(f, r, theta): unit-modulus spherical-wave response, length N."""
    if f <= 0:
        raise ValueError("frequency must be positive")
    return np.exp(-2j * np.pi * f / SPEED_OF_LIGHT * element_distances(geom, p))


def path_loss(f: float, r: float, k_abs: float = 0.0) -> float:
    """Linear attenuation (4 pi f r / c)^2 * e^{k_abs r}; > 1 means loss."""
    if f <= 0 or r <= 0 or k_abs < 0:
        raise ValueError("need f > 0, r > 0, k_abs >= 0")
    spread = (4.0 * np.pi * f * r / SPEED_OF_LIGHT) ** 2
    return spread * np.exp(k_abs * r)


@dataclass(frozen=True)
class ChannelInstance:
    """Complex responses h[k, m, n] plus the scenario that produced them.

    ``params`` is carried alongside its fingerprint because rate evaluation
    needs the subcarrier grid, power budget, and prefix length.
    """

    responses: np.ndarray          # (K, M, N) complex
    scenario: Scenario
    params: SystemParams
    params_fingerprint: str
    noise_power_watts_per_subcarrier: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.responses)):
            raise ValueError("channel responses must be finite")
        if self.noise_power_watts_per_subcarrier <= 0:
            raise ValueError("noise power must be positive")
        self.responses.setflags(write=False)

    @property
    def num_users(self) -> int:
        return self.responses.shape[0]

    @property
    def num_subcarriers(self) -> int:
        return self.responses.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.responses.shape[2]

    @property
    def frequencies_hz(self) -> np.ndarray:
        return subcarrier_frequencies(self.params)


def generate_channel(params: SystemParams, geom: ArrayGeometry,
                     scenario: Scenario, rng: np.random.Generator) -> ChannelInstance:
    """LOS + scattered spherical-wave channel with path loss and absorption.

    Gain magnitudes follow |beta|^2 = G_r G_t / eta(f, r), scatter paths
    additionally carry the linear scattering loss; gain phases are drawn
    uniformly and independently per (path, subcarrier).
    """
    K, M, N = params.num_users, params.num_subcarriers, params.num_antennas
    if scenario.num_users != K or geom.num_antennas != N:
        raise ValueError("scenario / geometry sizes do not match params")
    if any(len(s) != params.num_scatterers_per_user for s in scenario.scatterer_placements):
        raise ValueError("scatterer count does not match params")

    # reject points essentially inside the array (10 half-wavelengths)
    min_allowed = 10.0 * SPEED_OF_LIGHT / (2.0 * params.carrier_frequency_hz)
    freqs = subcarrier_frequencies(params)
    L_k = params.num_scatterers_per_user
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(K, 1 + L_k, M))

    gain_prod = params.rx_gain_linear * params.tx_gain_linear
    lam_lin = params.scattering_loss_linear
    k_abs = params.absorption_coeff_per_meter

    h = np.zeros((K, M, N), dtype=complex)
    for k in range(K):
        paths = [(scenario.user_placements[k], 1.0)]
        paths += [(p, lam_lin) for p in scenario.scatterer_placements[k]]
        for path_idx, (placement, extra_gain) in enumerate(paths):
            dists = element_distances(geom, placement)
            if np.min(dists) < min_allowed:
                raise DegeneratePlacementError(
                    f"placement at r={placement.distance_m} m is inside the array")
            if extra_gain == 0.0:
                continue
            for m in range(M):
                eta = path_loss(freqs[m], placement.distance_m, k_abs)
                mag = np.sqrt(gain_prod * extra_gain / eta)
                beta = mag * np.exp(1j * phases[k, path_idx, m])
                response = np.exp(-2j * np.pi * freqs[m] / SPEED_OF_LIGHT * dists)
                h[k, m] += beta * np.conj(response)

    return ChannelInstance(
        responses=h,
        scenario=scenario,
        params=params,
        params_fingerprint=params.fingerprint(),
        noise_power_watts_per_subcarrier=params.noise_power_watts_per_subcarrier,
    )
