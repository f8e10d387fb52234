"""Unsupervised composite loss recorded on a differentiation tape.

The optimizable parameters are unconstrained reals: PS phases enter as
angles (unit modulus by construction), TTD delays through a scaled
softplus (nonnegative by construction), digital weights as scaled
real/imaginary pairs, and the switch as per-chain logits resolved to a
hard permutation by the Hungarian step with a straight-through gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .assignment import optimal_permutation
from .autodiff import CVar, Tape, Var
from .beamformer import (BeamformerSet, ConfigMode, DelayBank, DigitalBeamformer,
                         PhaseShifterBank, SwitchMatrix)
from .channel import ChannelInstance
from .params import SystemParams


def delay_scale(params: SystemParams) -> float:
    """Unit for raw delay parameters; keeps gradients O(1)."""
    return params.max_delay_seconds if params.max_delay_seconds > 0 else 80e-12


def digital_scale(params: SystemParams) -> float:
    """Unit for raw digital weights; O(1) raws sit near the power budget."""
    return np.sqrt(params.transmit_power_watts
                   / (params.num_antennas * params.num_subcarriers
                      * params.num_rf_chains * params.num_users))


@dataclass
class Parameterization:
    """Unconstrained real parameters for one beamformer set."""

    mode: ConfigMode
    ps_angles: np.ndarray                 # (N, N_RF)
    delay_raws: np.ndarray | None         # (L_eff, N_RF); None in ps_only mode
    digital_raws: np.ndarray              # (2, M, N_RF, K) real/imag
    switch_logits: np.ndarray | None = None  # (N_RF, L, L); adaptive only

    def copy(self) -> "Parameterization":
        return Parameterization(
            self.mode, self.ps_angles.copy(),
            None if self.delay_raws is None else self.delay_raws.copy(),
            self.digital_raws.copy(),
            None if self.switch_logits is None else self.switch_logits.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"ps_angles": self.ps_angles, "digital_raws": self.digital_raws}
        if self.delay_raws is not None:
            out["delay_raws"] = self.delay_raws
        if self.switch_logits is not None:
            out["switch_logits"] = self.switch_logits
        return out


def num_delay_units(mode: ConfigMode, params: SystemParams) -> int:
    if mode is ConfigMode.PARALLEL:
        return params.num_antennas
    return params.num_ttds_per_chain


@dataclass(frozen=True)
class LossBreakdown:
    l_eff: float
    l_ps: float
    l_ttd: float
    l_pc: float
    total: float


@dataclass
class DecodedGraph:
    """Tape handles for a decoded beamformer set."""

    phi: CVar                       # (N, N_RF)
    delay_increments: Var | None    # (L_eff, N_RF) seconds
    analog: list[CVar]              # per subcarrier, (N, N_RF)
    digital: list[CVar]             # per subcarrier, (N_RF, K)
    switch_perms: np.ndarray        # (N_RF, L) hard permutations used forward
    switch_vars: list[Var] | None   # straight-through switch matrices


@dataclass
class LossEvaluation:
    breakdown: LossBreakdown
    tape: Tape
    total_var: Var
    param_vars: dict[str, Var]
    decoded: DecodedGraph

    def gradients(self) -> dict[str, np.ndarray]:
        names = list(self.param_vars)
        grads = self.tape.gradients(self.total_var, [self.param_vars[n] for n in names])
        return dict(zip(names, grads))


def _expand_index(num_subarrays: int, subarray_size: int) -> np.ndarray:
    return np.repeat(np.arange(num_subarrays), subarray_size)


def decode(tape: Tape, theta: Parameterization, params: SystemParams,
           freqs: np.ndarray) -> tuple[DecodedGraph, dict[str, Var]]:
    """Build the graph from raw parameters to per-subcarrier A_m and D_m."""
    N, n_rf, K = params.num_antennas, params.num_rf_chains, params.num_users
    M = len(freqs)
    mode = theta.mode

    param_vars: dict[str, Var] = {}
    angles = tape.var(theta.ps_angles, "ps_angles")
    param_vars["ps_angles"] = angles
    phi = ad.expj(angles)

    if mode is ConfigMode.PS_ONLY:
        t_inc = None
        t_eff = None
        L_eff = params.num_ttds_per_chain
    else:
        raws = tape.var(theta.delay_raws, "delay_raws")
        param_vars["delay_raws"] = raws
        t_inc = ad.softplus(raws) * delay_scale(params)
        L_eff = theta.delay_raws.shape[0]
        if mode.accumulates:
            tri = tape.const(np.tril(np.ones((L_eff, L_eff))))
            t_eff = tri @ t_inc
        else:
            t_eff = t_inc

    # hard permutations used in the forward pass
    switch_vars: list[Var] | None = None
    if mode.switch_free:
        logits = tape.var(theta.switch_logits, "switch_logits")
        param_vars["switch_logits"] = logits
        perms = np.zeros((n_rf, L_eff), dtype=int)
        switch_vars = []
        for i in range(n_rf):
            perms[i] = optimal_permutation(theta.switch_logits[i])
            hard = np.zeros((L_eff, L_eff))
            hard[np.arange(L_eff), perms[i]] = 1.0
            switch_vars.append(ad.straight_through(logits[i], hard, "switch_ste"))
    else:
        perms = np.tile(np.arange(L_eff), (n_rf, 1))

    d_scale = digital_scale(params)
    d_raws = tape.var(theta.digital_raws, "digital_raws")
    param_vars["digital_raws"] = d_raws

    analog = assemble_analog(tape, phi, t_eff, switch_vars, freqs, N)
    digital = [CVar(d_raws[0, m] * d_scale, d_raws[1, m] * d_scale)
               for m in range(M)]

    decoded = DecodedGraph(phi=phi, delay_increments=t_inc, analog=analog,
                           digital=digital, switch_perms=perms,
                           switch_vars=switch_vars)
    return decoded, param_vars


def assemble_analog(tape: Tape, phi: CVar, t_eff: Var | None,
                    switch_vars: list[Var] | None, freqs: np.ndarray,
                    num_antennas: int) -> list[CVar]:
    """Per-subcarrier analog matrices from PS phases, delays, and switches.

    Each subarray block carries its phase-shifter weights times the sum of
    switch-selected TTD phase terms (exactly one term for a permutation).
    """
    N = num_antennas
    n_rf = phi.re.shape[1]
    analog: list[CVar] = []
    L_eff = None if t_eff is None else t_eff.shape[0]
    expand = None if t_eff is None else _expand_index(L_eff, N // L_eff)
    for f in freqs:
        cols_re, cols_im = [], []
        for i in range(n_rf):
            if t_eff is None:
                mix_re = tape.const(np.ones(N))
                mix_im = tape.const(np.zeros(N))
            else:
                theta_m = t_eff[:, i] * (2.0 * np.pi * f)
                ttd_re = ad.cos(theta_m)          # e^{-j theta}: (cos, -sin)
                ttd_im = -ad.sin(theta_m)
                if switch_vars is not None:
                    s = switch_vars[i]
                    ttd_re = (s @ ttd_re.reshape(L_eff, 1)).reshape(L_eff)
                    ttd_im = (s @ ttd_im.reshape(L_eff, 1)).reshape(L_eff)
                mix_re = ttd_re[expand]
                mix_im = ttd_im[expand]
            col = CVar(phi.re[:, i], phi.im[:, i]) * CVar(mix_re, mix_im)
            cols_re.append(col.re.reshape(N, 1))
            cols_im.append(col.im.reshape(N, 1))
        analog.append(CVar(ad.concat(cols_re, axis=1), ad.concat(cols_im, axis=1)))
    return analog


def loss_eff_graph(H: ChannelInstance, decoded: DecodedGraph, tape: Tape) -> Var:
    """Negative spectral efficiency, Shannon rates with the CP prefactor."""
    params = H.params
    sigma2 = H.noise_power_watts_per_subcarrier
    total = None
    for m in range(len(decoded.analog)):
        Hh = CVar.from_complex(tape, H.responses[:, m, :].conj())   # (K, N)
        G = Hh.matmul(decoded.analog[m]).matmul(decoded.digital[m])  # (K, K)
        P = G.abs2()
        K = P.shape[0]
        diag_idx = (np.arange(K), np.arange(K))
        signal = P[diag_idx]
        interference = P.sum(axis=1) - signal
        rate = ad.log2(signal / (interference + sigma2) + 1.0)
        contrib = rate.sum()
        total = contrib if total is None else total + contrib
    return total * (-1.0 / (params.num_subcarriers + params.cyclic_prefix_len))


def loss_ps_graph(phi: CVar) -> Var:
    mod2 = phi.abs2()
    dev = mod2 - 1.0
    return (dev * dev).sum()


def loss_ttd_graph(delays: Var | None, t_max: float, tape: Tape,
                   bounded_above: bool = True) -> Var:
    """Sum of psi(t) over incremental delays; quadratic outside [0, t_max]."""
    if delays is None:
        return tape.const(0.0)
    below = ad.relu(-delays)
    total = (below * below).sum()
    if bounded_above:
        above = ad.relu(delays - t_max)
        total = total + (above * above).sum()
    return total


def loss_pc_graph(decoded: DecodedGraph, P_t: float, tape: Tape,
                  per_subcarrier: bool = False) -> Var:
    powers = []
    for A, D in zip(decoded.analog, decoded.digital):
        W = A.matmul(D)
        powers.append(W.abs2().sum())
    if per_subcarrier:
        total = None
        for p in powers:
            over = ad.relu(p - P_t)
            term = over * over
            total = term if total is None else total + term
        return total
    total = powers[0]
    for p in powers[1:]:
        total = total + p
    dev = total - P_t
    return dev * dev


def composite_loss(H: ChannelInstance, decoded: DecodedGraph, tape: Tape,
                   penalty_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
                   per_subcarrier_power: bool = False,
                   bounded_delays: bool = True) -> tuple[Var, LossBreakdown]:
    """Efficiency term plus the three weighted penalty terms."""
    params = H.params
    w_ps, w_ttd, w_pc = penalty_weights
    l_eff = loss_eff_graph(H, decoded, tape)
    l_ps = loss_ps_graph(decoded.phi) * w_ps
    l_ttd = loss_ttd_graph(decoded.delay_increments, params.max_delay_seconds,
                           tape, bounded_above=bounded_delays) * w_ttd
    l_pc = loss_pc_graph(decoded, params.transmit_power_watts, tape,
                         per_subcarrier=per_subcarrier_power) * w_pc
    total = l_eff + l_ps + l_ttd + l_pc

    if not np.isfinite(total.value):
        culprit = tape.first_nonfinite()
        raise ad.GraphError(f"non-finite loss; first bad value at {culprit}")

    breakdown = LossBreakdown(
        l_eff=float(l_eff.value), l_ps=float(l_ps.value),
        l_ttd=float(l_ttd.value), l_pc=float(l_pc.value),
        total=float(total.value))
    return total, breakdown


def total_loss(H: ChannelInstance, theta: Parameterization,
               penalty_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
               per_subcarrier_power: bool = False,
               bounded_delays: bool = True) -> LossEvaluation:
    """Composite loss on a fresh tape; gradients available for every raw.

    Raises GraphError naming the offending node if the forward pass
    produces a non-finite value.
    """
    tape = Tape()
    decoded, param_vars = decode(tape, theta, H.params, H.frequencies_hz)
    total, breakdown = composite_loss(H, decoded, tape, penalty_weights,
                                      per_subcarrier_power, bounded_delays)
    return LossEvaluation(breakdown, tape, total, param_vars, decoded)


# ---- decoding to a concrete BeamformerSet ----

def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    y = np.maximum(y, 1e-13)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def realize(theta: Parameterization, params: SystemParams,
            clamp_delays: bool = True, unbounded: bool = False) -> BeamformerSet:
    """Turn raw parameters into a concrete, hardware-feasible BeamformerSet."""
    phi = np.exp(1j * theta.ps_angles)
    if theta.mode is ConfigMode.PS_ONLY:
        t_inc = np.zeros((params.num_ttds_per_chain, params.num_rf_chains))
    else:
        t_inc = delay_scale(params) * np.logaddexp(0.0, theta.delay_raws)
        if clamp_delays and not unbounded:
            t_inc = np.clip(t_inc, 0.0, params.max_delay_seconds)
    L_eff = t_inc.shape[0]
    if theta.mode.switch_free:
        perms = np.stack([optimal_permutation(theta.switch_logits[i])
                          for i in range(params.num_rf_chains)])
        switches = SwitchMatrix(perms)
    else:
        switches = SwitchMatrix.identity(L_eff, params.num_rf_chains)
    digital = digital_scale(params) * (theta.digital_raws[0] + 1j * theta.digital_raws[1])
    return BeamformerSet(
        ps=PhaseShifterBank(phi),
        delays=DelayBank(t_inc),
        switches=switches,
        digital=DigitalBeamformer(digital),
        config_mode=theta.mode,
        unbounded_delays=unbounded,
    )


def encode(bf: BeamformerSet, params: SystemParams) -> Parameterization:
    """Inverse of realize (up to softplus clipping at zero delay)."""
    angles = np.angle(bf.ps.phases)
    if bf.config_mode is ConfigMode.PS_ONLY:
        delay_raws = None
    else:
        delay_raws = np.maximum(
            _inverse_softplus(bf.delays.incremental_delays / delay_scale(params)), -30.0)
    d = bf.digital.weights / digital_scale(params)
    digital_raws = np.stack([d.real, d.imag])
    logits = None
    if bf.config_mode.switch_free:
        L = bf.num_ttds
        logits = np.zeros((params.num_rf_chains, L, L))
        for i in range(params.num_rf_chains):
            logits[i, np.arange(L), bf.switches.perms[i]] = 3.0
    return Parameterization(bf.config_mode, angles, delay_raws, digital_raws, logits)
