"""PS/TTD/switch/digital beamformer representation and evaluation.

The analog beamformer for subcarrier frequency f is built blockwise:
subarray p on RF chain i carries phase phi[p-block, i] times the TTD phase
e^{-j 2 pi f t} of whichever cumulative delay the switch routes to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .channel import ChannelInstance
from .params import SystemParams


class ConfigMode(str, Enum):
    PARALLEL = "parallel"
    SERIAL_FIXED = "serial"
    ADAPTIVE = "adaptive"
    PS_ONLY = "ps_only"
    TTD_INFINITE = "ttd_infinite"

    @property
    def accumulates(self) -> bool:
        """Serial-family modes accumulate delays along the TTD chain."""
        return self in (ConfigMode.SERIAL_FIXED, ConfigMode.ADAPTIVE,
                        ConfigMode.TTD_INFINITE)

    @property
    def switch_free(self) -> bool:
        return self is ConfigMode.ADAPTIVE


@dataclass(frozen=True)
class PhaseShifterBank:
    """Per-antenna unit-modulus weights, one column per RF chain."""

    phases: np.ndarray  # (N, N_RF) complex

    def modulus_residual(self) -> float:
        return float(np.max(np.abs(np.abs(self.phases) - 1.0)))


@dataclass(frozen=True)
class DelayBank:
    """Incremental TTD delays in seconds; cumulative values are derived."""

    incremental_delays: np.ndarray  # (L, N_RF) float

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.incremental_delays, axis=0)

    def range_residual(self, t_max: float, bounded_above: bool = True) -> float:
        t = self.incremental_delays
        low = float(np.max(np.maximum(-t, 0.0), initial=0.0))
        if not bounded_above:
            return low
        high = float(np.max(np.maximum(t - t_max, 0.0), initial=0.0))
        return max(low, high)


@dataclass(frozen=True)
class SwitchMatrix:
    """One permutation per RF chain, stored as index vectors.

    ``perms[i][p]`` is the TTD index feeding subarray p on chain i;
    equivalently s[p, l, i] = 1 iff perms[i][p] == l.
    """

    perms: np.ndarray  # (N_RF, L) int

    @classmethod
    def identity(cls, num_ttds: int, num_chains: int) -> "SwitchMatrix":
        return cls(np.tile(np.arange(num_ttds), (num_chains, 1)))

    def validity_residual(self) -> float:
        worst = 0.0
        L = self.perms.shape[1]
        for row in self.perms:
            counts = np.bincount(row, minlength=L)
            worst = max(worst, float(np.max(np.abs(counts - 1))))
        return worst

    def as_matrix(self, chain: int) -> np.ndarray:
        L = self.perms.shape[1]
        s = np.zeros((L, L))
        s[np.arange(L), self.perms[chain]] = 1.0
        return s


@dataclass(frozen=True)
class DigitalBeamformer:
    """Per-subcarrier baseband weights, column d[m, :, k] per user."""

    weights: np.ndarray  # (M, N_RF, K) complex


@dataclass(frozen=True)
class BeamformerSet:
    ps: PhaseShifterBank
    delays: DelayBank
    switches: SwitchMatrix
    digital: DigitalBeamformer
    config_mode: ConfigMode
    unbounded_delays: bool = False

    def __post_init__(self):
        N, n_rf = self.ps.phases.shape
        L = self.delays.incremental_delays.shape[0]
        if N % L != 0:
            raise ValueError("antenna count must be divisible by the TTD count")
        if self.config_mode is ConfigMode.PARALLEL and L != N:
            raise ValueError("parallel mode requires one TTD per antenna")
        if self.switches.perms.shape != (n_rf, L):
            raise ValueError("switch shape does not match (N_RF, L)")
        if not self.config_mode.switch_free:
            ident = np.tile(np.arange(L), (n_rf, 1))
            if not np.array_equal(self.switches.perms, ident):
                raise ValueError(f"{self.config_mode.value} mode requires identity switch")
        if self.config_mode is ConfigMode.PS_ONLY and np.any(
                self.delays.incremental_delays != 0.0):
            raise ValueError("ps_only mode requires zero delays")
        object.__setattr__(self, "unbounded_delays",
                           bool(self.unbounded_delays
                                or self.config_mode is ConfigMode.TTD_INFINITE))

    @property
    def num_antennas(self) -> int:
        return self.ps.phases.shape[0]

    @property
    def num_ttds(self) -> int:
        return self.delays.incremental_delays.shape[0]

    @property
    def subarray_size(self) -> int:
        return self.num_antennas // self.num_ttds

    def effective_delays(self) -> np.ndarray:
        """Delay applied by TTD l on chain i, (L, N_RF)."""
        if self.config_mode.accumulates:
            return self.delays.cumulative()
        return self.delays.incremental_delays

    def with_digital(self, weights: np.ndarray) -> "BeamformerSet":
        return replace(self, digital=DigitalBeamformer(weights))


@dataclass(frozen=True)
class ConstraintResiduals:
    ps_modulus: float
    delay_range: float
    switch_validity: float
    power: float

    def max_residual(self) -> float:
        return max(self.ps_modulus, self.delay_range, self.switch_validity, self.power)


@dataclass(frozen=True)
class EvalReport:
    per_user_rates: np.ndarray       # (K, M) bits/s/Hz
    spectral_efficiency: float
    power_per_subcarrier: np.ndarray  # (M,) watts
    constraint_residuals: ConstraintResiduals
    flags: tuple[str, ...] = ()


def cumulative_delays(incremental: np.ndarray) -> np.ndarray:
    """t_l = sum of the first l incremental delays."""
    incremental = np.asarray(incremental, dtype=float)
    if not np.all(np.isfinite(incremental)):
        raise ValueError("incremental delays must be finite")
    return np.cumsum(incremental, axis=0)


def build_analog(bf: BeamformerSet, f: float) -> np.ndarray:
    """Frequency-dependent analog matrix A (N x N_RF) at frequency f."""
    if bf.switches.validity_residual() != 0.0:
        raise ValueError("switch matrix is not a permutation")
    t = bf.effective_delays()                       # (L, N_RF)
    n_rf = t.shape[1]
    Q = bf.subarray_size
    cols = []
    for i in range(n_rf):
        routed = t[bf.switches.perms[i], i]          # delay per subarray, (L,)
        per_antenna = np.repeat(routed, Q)
        cols.append(np.exp(-2j * np.pi * f * per_antenna))
    return bf.ps.phases * np.stack(cols, axis=1)


def user_rate(H: ChannelInstance, A_m: np.ndarray, D_m: np.ndarray,
              k: int, m: int) -> float:
    """Shannon rate of user k on subcarrier m (0-based indices)."""
    sigma2 = H.noise_power_watts_per_subcarrier
    if sigma2 <= 0:
        raise ValueError("noise power must be positive")
    h = H.responses[k, m]
    gains = np.abs(h.conj() @ A_m @ D_m) ** 2        # (K,)
    signal = gains[k]
    interference = float(np.sum(gains) - signal)
    return float(np.log2(1.0 + signal / (interference + sigma2)))


def _rates_matrix(H: ChannelInstance, bf: BeamformerSet) -> tuple[np.ndarray, np.ndarray]:
    K, M, _ = H.responses.shape
    freqs = H.frequencies_hz
    sigma2 = H.noise_power_watts_per_subcarrier
    rates = np.zeros((K, M))
    power = np.zeros(M)
    for m in range(M):
        A = build_analog(bf, freqs[m])
        F = A @ bf.digital.weights[m]                # (N, K)
        power[m] = float(np.sum(np.abs(F) ** 2))
        G = np.abs(H.responses[:, m, :].conj() @ F) ** 2   # (K user, K stream)
        signal = np.diag(G)
        interference = G.sum(axis=1) - signal
        rates[:, m] = np.log2(1.0 + signal / (interference + sigma2))
    return rates, power


def spectral_efficiency(H: ChannelInstance, bf: BeamformerSet) -> EvalReport:
    """Aggregate rates with the 1/(M + L_CP) prefactor and fill residuals."""
    params = H.params
    rates, power = _rates_matrix(H, bf)
    se = float(rates.sum() / (params.num_subcarriers + params.cyclic_prefix_len))
    return EvalReport(
        per_user_rates=rates,
        spectral_efficiency=se,
        power_per_subcarrier=power,
        constraint_residuals=validate(bf, params),
    )


def power_per_subcarrier(bf: BeamformerSet, freqs: np.ndarray) -> np.ndarray:
    """||A_m D_m||_F^2 for every subcarrier frequency."""
    out = np.zeros(len(freqs))
    for m, f in enumerate(freqs):
        A = build_analog(bf, f)
        out[m] = float(np.sum(np.abs(A @ bf.digital.weights[m]) ** 2))
    return out


def project_power(bf: BeamformerSet, P_t: float, freqs: np.ndarray) -> BeamformerSet:
    """Scale over-budget subcarriers' digital weights onto the budget.

    Subcarriers already inside the budget are left untouched (bitwise).
    """
    powers = power_per_subcarrier(bf, freqs)
    if np.all(powers <= P_t):
        return bf
    weights = bf.digital.weights.copy()
    for m, p in enumerate(powers):
        if p > P_t:
            weights[m] *= np.sqrt(P_t / p)
    return bf.with_digital(weights)


def validate(bf: BeamformerSet, params: SystemParams) -> ConstraintResiduals:
    """Max deviation per constraint family; all zeros iff feasible."""
    from .channel import subcarrier_frequencies

    freqs = subcarrier_frequencies(params)
    powers = power_per_subcarrier(bf, freqs)
    excess = float(np.max(np.maximum(powers - params.transmit_power_watts, 0.0)))
    return ConstraintResiduals(
        ps_modulus=bf.ps.modulus_residual(),
        delay_range=bf.delays.range_residual(
            params.max_delay_seconds, bounded_above=not bf.unbounded_delays),
        switch_validity=bf.switches.validity_residual(),
        power=excess,
    )


def count_configurations(N: int, L: int) -> tuple[int, int]:
    """Exact switch-configuration counts as arbitrary-precision integers.

    Returns (unconstrained, equal_sized): the number of surjective
    TTD-to-antenna labelings L! * S(N, L), and the number of unordered
    equal-sized partitions N! / ((N/L)!^L L!). The latter requires L | N.
    """
    if L > N or L < 1:
        raise ValueError("need 1 <= L <= N")
    unconstrained = sum((-1) ** (L - i) * math.comb(L, i) * i ** N
                        for i in range(L + 1))
    if N % L != 0:
        raise ValueError("equal-sized count requires L to divide N")
    Q = N // L
    equal_sized = math.factorial(N) // (math.factorial(Q) ** L * math.factorial(L))
    return unconstrained, equal_sized
