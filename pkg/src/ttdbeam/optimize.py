"""Per-instance beamformer optimization and benchmark baselines.

Descent runs on the composite loss with a fixed base step and backtracking
halving; restarts combine channel-matched initializations (delay profile
fitted from per-antenna phase slopes, PS matched at the center subcarrier)
with random draws, plus any warm starts handed in by sweep harnesses.
The returned set is always hardware feasible: delays clamped to range and
digital weights projected onto the power budget before evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import objective as obj
from .autodiff import GraphError
from .beamformer import (BeamformerSet, ConfigMode, ConstraintResiduals,
                         DigitalBeamformer, EvalReport, build_analog,
                         project_power, spectral_efficiency)
from .channel import ChannelInstance
from .objective import LossBreakdown, Parameterization
from .params import SystemParams


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 1e-2
    max_iters: int = 150
    num_restarts: int = 5
    seed: int = 0
    penalty_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # ps, ttd, pc
    convergence_tol: float = 1e-7
    per_subcarrier_power_penalty: bool = False

    def __post_init__(self):
        if self.step_size <= 0 or self.max_iters < 1 or self.num_restarts < 1:
            raise ValueError("need positive step size, iterations, and restarts")


# ---- channel-matched initialization heuristics ----

def estimate_relative_delays(H: ChannelInstance, user: int,
                             grid_points: int = 512) -> np.ndarray:
    """Per-antenna delay profile that best aligns the user's phase slopes.

    Works on phases relative to antenna 0, so the random per-subcarrier
    gain phase cancels. Delays are only identifiable modulo M/B (that
    shift is a frequency-flat rotation the PSs absorb); the returned
    profile is unwrapped to the shortest span and offset to min zero.
    """
    freqs = H.frequencies_hz
    h = H.responses[user]                       # (M, N)
    rel = h * np.conj(h[:, [0]])
    period = H.params.num_subcarriers / H.params.bandwidth_hz
    taus = np.linspace(0.0, period, grid_points, endpoint=False)
    probe = np.exp(-2j * np.pi * np.outer(taus, freqs))   # (T, M)
    scores = np.abs(probe @ rel)                # (T, N)
    est = taus[np.argmax(scores, axis=0)]       # in [0, period)

    # rotate the branch cut to the largest circular gap
    order = np.argsort(est)
    sorted_vals = est[order]
    gaps = np.diff(np.concatenate([sorted_vals, [sorted_vals[0] + period]]))
    cut = sorted_vals[(np.argmax(gaps) + 1) % len(est)] if len(est) > 1 else 0.0
    unwrapped = np.mod(est - cut, period)
    needed = np.max(unwrapped) - unwrapped      # delay to add per antenna
    return needed


def _fit_serial_increments(targets: np.ndarray, t_max: float) -> np.ndarray:
    """Greedy nondecreasing fit with per-step increments in [0, t_max]."""
    inc = np.zeros_like(targets)
    cum = 0.0
    for p, want in enumerate(targets):
        inc[p] = np.clip(want - cum, 0.0, t_max)
        cum += inc[p]
    return inc


def _fit_serial_window(targets: np.ndarray, t_max: float) -> np.ndarray:
    """Serial fit with an offset: when the cascade cannot span the whole
    target profile, aligning the best window beats anchoring at zero
    (a common offset is absorbed by the phase shifters)."""
    best_inc, best_err = None, np.inf
    for offset in np.unique(np.concatenate([[0.0], targets])):
        shifted = targets - offset
        inc = _fit_serial_increments(shifted, t_max)
        err = float(np.sum(np.abs(np.cumsum(inc) - shifted)))
        if err < best_err:
            best_inc, best_err = inc, err
    return best_inc


def _best_window_offset(targets: np.ndarray, t_max: float) -> float:
    """Offset whose [o, o + t_max] window covers the most target delays."""
    candidates = np.unique(targets)
    best_o, best_count = 0.0, -1
    for o in candidates:
        count = int(np.sum((targets >= o) & (targets <= o + t_max)))
        if count > best_count:
            best_o, best_count = float(o), count
    return best_o


def _ps_angles_for(H: ChannelInstance, per_antenna_delay: np.ndarray,
                   chain_users: np.ndarray) -> np.ndarray:
    """PS angles aligning each chain's user at the center subcarrier."""
    params = H.params
    m_c = params.num_subcarriers // 2
    f_c = H.frequencies_hz[m_c]
    angles = np.zeros((params.num_antennas, params.num_rf_chains))
    for i, k in enumerate(chain_users):
        angles[:, i] = (np.angle(H.responses[k, m_c])
                        + 2.0 * np.pi * f_c * per_antenna_delay[:, i])
    return angles


def _zero_forcing_digital(H: ChannelInstance, theta: Parameterization,
                          unbounded: bool) -> np.ndarray:
    """Digital raws from per-subcarrier ZF on the effective channel.

    Power starts at P_t/M per subcarrier, the equilibrium of the aggregate
    power penalty; the finalize step rescales onto the per-subcarrier
    budget for reporting.
    """
    params = H.params
    bf = obj.realize(theta, params, clamp_delays=not unbounded, unbounded=unbounded)
    freqs = H.frequencies_hz
    K = params.num_users
    budget = params.transmit_power_watts / params.num_subcarriers
    D = np.zeros((params.num_subcarriers, params.num_rf_chains, K), dtype=complex)
    for m in range(params.num_subcarriers):
        A = build_analog(bf, freqs[m])
        Heff = H.responses[:, m, :].conj() @ A          # (K, N_RF)
        Dm = np.linalg.pinv(Heff, rcond=1e-10)          # (N_RF, K)
        p = np.sum(np.abs(A @ Dm) ** 2)
        if p > 0:
            Dm *= np.sqrt(budget / p)
        D[m] = Dm
    d = D / obj.digital_scale(params)
    return np.stack([d.real, d.imag])


def _chain_users(params: SystemParams) -> np.ndarray:
    return np.arange(params.num_rf_chains) % params.num_users


def matched_initialization(H: ChannelInstance, mode: ConfigMode,
                           fit_delays: bool, unbounded: bool) -> Parameterization:
    """Channel-matched starting point; with or without the delay fit."""
    params = H.params
    chain_users = _chain_users(params)
    L_eff = obj.num_delay_units(mode, params)
    Q = params.num_antennas // L_eff
    t_max = params.max_delay_seconds if not unbounded else np.inf
    scale = obj.delay_scale(params)

    per_antenna = np.zeros((params.num_antennas, params.num_rf_chains))
    increments = np.zeros((L_eff, params.num_rf_chains))
    logits = None
    if mode.switch_free:
        logits = np.zeros((params.num_rf_chains, L_eff, L_eff))

    if fit_delays and mode is not ConfigMode.PS_ONLY:
        for i, k in enumerate(chain_users):
            needed = estimate_relative_delays(H, k)
            if mode is ConfigMode.PARALLEL:
                offset = _best_window_offset(needed, t_max)
                inc = np.clip(needed - offset, 0.0, t_max)
                increments[:, i] = inc
                per_antenna[:, i] = inc
            else:
                targets = needed.reshape(L_eff, Q).mean(axis=1)
                if mode.switch_free:
                    order = np.argsort(targets, kind="stable")
                    inc = _fit_serial_window(targets[order], t_max)
                    increments[:, i] = inc
                    cum = np.cumsum(inc)
                    perm = np.empty(L_eff, dtype=int)
                    perm[order] = np.arange(L_eff)
                    shift = np.mean(targets[order] - cum)
                    logits[i] = -np.abs((targets[:, None] - shift) - cum[None, :]) / scale
                    per_sub = cum[perm]
                else:
                    inc = _fit_serial_window(targets, t_max)
                    increments[:, i] = inc
                    per_sub = np.cumsum(inc)
                per_antenna[:, i] = np.repeat(per_sub, Q)
    elif mode.switch_free:
        for i in range(params.num_rf_chains):
            logits[i, np.arange(L_eff), np.arange(L_eff)] = 3.0

    angles = _ps_angles_for(H, per_antenna, chain_users)
    if mode is ConfigMode.PS_ONLY:
        delay_raws = None
    else:
        delay_raws = obj._inverse_softplus(increments / scale)
        delay_raws = np.maximum(delay_raws, -30.0)
    digital_raws = np.zeros((2, params.num_subcarriers, params.num_rf_chains,
                             params.num_users))
    theta = Parameterization(mode, angles, delay_raws, digital_raws, logits)
    theta.digital_raws = _zero_forcing_digital(H, theta, unbounded)
    return theta


def random_initialization(H: ChannelInstance, mode: ConfigMode,
                          rng: np.random.Generator) -> Parameterization:
    params = H.params
    N, n_rf, M, K = (params.num_antennas, params.num_rf_chains,
                     params.num_subcarriers, params.num_users)
    angles = rng.uniform(-np.pi, np.pi, size=(N, n_rf))
    L_eff = obj.num_delay_units(mode, params)
    delay_raws = None if mode is ConfigMode.PS_ONLY else rng.normal(size=(L_eff, n_rf))
    digital_raws = rng.normal(scale=np.sqrt(0.5), size=(2, M, n_rf, K))
    logits = rng.normal(size=(n_rf, L_eff, L_eff)) if mode.switch_free else None
    return Parameterization(mode, angles, delay_raws, digital_raws, logits)


# ---- descent ----

@dataclass
class _RestartResult:
    theta: Parameterization
    trace: list[LossBreakdown]
    exhausted: bool


def _step(theta: Parameterization, grads: dict[str, np.ndarray],
          alpha: float) -> Parameterization:
    out = theta.copy()
    for name, g in grads.items():
        arr = getattr(out, name)
        setattr(out, name, arr - alpha * g)
    return out


def _descend(H: ChannelInstance, theta0: Parameterization, cfg: OptimizerConfig,
             bounded: bool) -> _RestartResult:
    def evaluate(theta: Parameterization):
        ev = obj.total_loss(H, theta, cfg.penalty_weights,
                            cfg.per_subcarrier_power_penalty, bounded)
        return ev.breakdown, ev.gradients()

    theta = theta0.copy()
    breakdown, grads = evaluate(theta)
    trace = [breakdown]
    alpha = cfg.step_size
    exhausted = True
    for _ in range(cfg.max_iters):
        accepted = False
        for _ in range(30):
            candidate = _step(theta, grads, alpha)
            try:
                cand_breakdown, cand_grads = evaluate(candidate)
            except GraphError:
                alpha *= 0.1
                continue
            if cand_breakdown.total <= breakdown.total:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            exhausted = False
            break
        theta, breakdown, grads = candidate, cand_breakdown, cand_grads
        trace.append(breakdown)
        alpha = min(alpha * 1.5, 30.0 * cfg.step_size)
        if len(trace) > 15:
            drop = trace[-15].total - breakdown.total
            if drop < cfg.convergence_tol * max(1.0, abs(breakdown.total)):
                exhausted = False
                break
    return _RestartResult(theta, trace, exhausted)


def _finalize(H: ChannelInstance, theta: Parameterization,
              unbounded: bool) -> tuple[BeamformerSet, EvalReport]:
    """Clamp delays, use the full per-subcarrier power budget, project.

    A common scale on a subcarrier's digital weights raises every user's
    SINR, so reporting at the exact budget is a free, deterministic win.
    """
    params = H.params
    bf = obj.realize(theta, params, clamp_delays=True, unbounded=unbounded)
    from .beamformer import power_per_subcarrier
    powers = power_per_subcarrier(bf, H.frequencies_hz)
    scale = np.where(powers > 0,
                     np.sqrt(params.transmit_power_watts / np.maximum(powers, 1e-300)),
                     1.0)
    bf = bf.with_digital(bf.digital.weights * scale[:, None, None])
    bf = project_power(bf, params.transmit_power_watts, H.frequencies_hz)
    return bf, spectral_efficiency(H, bf)


def optimize_instance(H: ChannelInstance, mode: ConfigMode, cfg: OptimizerConfig,
                      warm_starts: tuple[BeamformerSet, ...] = (),
                      unbounded_delays: bool = False,
                      ) -> tuple[BeamformerSet, EvalReport, np.ndarray]:
    """Best-of-restarts gradient descent on the composite loss.

    Warm-start sets are both re-encoded as restart initializations and kept
    as candidates verbatim, so handing in the solution of a structurally
    nested mode (or of a tighter delay range) can never lose performance.
    Returns the projected set, its evaluation, and the winning loss trace
    as an (iterations, 5) array of (l_eff, l_ps, l_ttd, l_pc, total).
    """
    params = H.params
    bounded = not unbounded_delays
    rng = np.random.default_rng(cfg.seed)

    inits: list[Parameterization] = []
    for bf in warm_starts:
        inits.append(_convert_mode(bf, mode, params, unbounded_delays))
    inits.append(matched_initialization(H, mode, fit_delays=True,
                                        unbounded=unbounded_delays))
    inits.append(matched_initialization(H, mode, fit_delays=False,
                                        unbounded=unbounded_delays))
    while len(inits) < max(cfg.num_restarts, 2) + len(warm_starts):
        inits.append(random_initialization(H, mode, rng))
    inits = inits[:max(cfg.num_restarts + len(warm_starts), 2)]

    candidates: list[tuple[BeamformerSet, EvalReport, list[LossBreakdown], bool]] = []
    for bf in warm_starts:
        converted = obj.realize(_convert_mode(bf, mode, params, unbounded_delays),
                                params, clamp_delays=True, unbounded=unbounded_delays)
        converted = project_power(converted, params.transmit_power_watts,
                                  H.frequencies_hz)
        report = spectral_efficiency(H, converted)
        candidates.append((converted, report, [], False))

    for theta0 in inits:
        try:
            result = _descend(H, theta0, cfg, bounded)
        except GraphError:
            reduced = OptimizerConfig(
                step_size=cfg.step_size * 0.1, max_iters=cfg.max_iters,
                num_restarts=cfg.num_restarts, seed=cfg.seed,
                penalty_weights=cfg.penalty_weights,
                convergence_tol=cfg.convergence_tol,
                per_subcarrier_power_penalty=cfg.per_subcarrier_power_penalty)
            result = _descend(H, theta0, reduced, bounded)
        bf, report = _finalize(H, result.theta, unbounded_delays)
        candidates.append((bf, report, result.trace, result.exhausted))

    best = max(candidates, key=lambda c: c[1].spectral_efficiency)
    bf, report, trace, exhausted = best
    if exhausted:
        report = EvalReport(report.per_user_rates, report.spectral_efficiency,
                            report.power_per_subcarrier, report.constraint_residuals,
                            flags=report.flags + ("iteration_budget_exhausted",))
    if not trace:
        ev = obj.total_loss(H, obj.encode(bf, params), cfg.penalty_weights,
                            cfg.per_subcarrier_power_penalty, bounded)
        trace = [ev.breakdown]
    trace_arr = np.array([[b.l_eff, b.l_ps, b.l_ttd, b.l_pc, b.total] for b in trace])
    return bf, report, trace_arr


def _convert_mode(bf: BeamformerSet, mode: ConfigMode, params: SystemParams,
                  unbounded: bool) -> Parameterization:
    """Re-express a set in a (structurally nesting) target mode."""
    if bf.config_mode is mode and bf.unbounded_delays == unbounded:
        return obj.encode(bf, params)
    theta = obj.encode(bf, params)
    L_target = obj.num_delay_units(mode, params)
    inc = (np.zeros((bf.num_ttds, params.num_rf_chains))
           if bf.config_mode is ConfigMode.PS_ONLY
           else bf.delays.incremental_delays)
    if mode is ConfigMode.PS_ONLY:
        delay_raws = None
    else:
        if inc.shape[0] != L_target:
            # moving between subarray granularities: restart from zero delays
            inc = np.zeros((L_target, params.num_rf_chains))
        elif bf.config_mode.accumulates != mode.accumulates:
            eff = bf.effective_delays()
            inc = np.diff(np.concatenate([np.zeros((1, inc.shape[1])), eff]), axis=0) \
                if mode.accumulates else eff
        delay_raws = np.maximum(
            obj._inverse_softplus(np.maximum(inc, 0.0) / obj.delay_scale(params)), -30.0)
    logits = None
    if mode.switch_free:
        L = L_target
        logits = np.zeros((params.num_rf_chains, L, L))
        if bf.config_mode.switch_free and bf.num_ttds == L_target:
            perms = bf.switches.perms
        else:
            perms = np.tile(np.arange(L), (params.num_rf_chains, 1))
        for i in range(params.num_rf_chains):
            logits[i, np.arange(L), perms[i]] = 3.0
    return Parameterization(mode, theta.ps_angles, delay_raws,
                            theta.digital_raws, logits)


# ---- benchmark baselines ----

def water_filling(gains: np.ndarray, total_power: float, noise: float) -> np.ndarray:
    """Classic water-filling over parallel channels with the given gains."""
    gains = np.asarray(gains, dtype=float)
    K = len(gains)
    powers = np.zeros(K)
    active = gains > 0
    floors = np.full(K, np.inf)
    floors[active] = noise / gains[active]
    order = np.argsort(floors)
    for count in range(int(np.sum(active)), 0, -1):
        idx = order[:count]
        level = (total_power + np.sum(floors[idx])) / count
        if level >= floors[idx[-1]]:
            powers[idx] = level - floors[idx]
            break
    return powers


def full_digital_baseline(H: ChannelInstance,
                          P_t: float | None = None) -> EvalReport:
    """Theoretical upper benchmark: one RF chain per antenna.

    Single user: matched filtering per subcarrier. Multi-user:
    zero-forcing directions with water-filling across users.
    """
    params = H.params
    if P_t is None:
        P_t = params.transmit_power_watts
    sigma2 = H.noise_power_watts_per_subcarrier
    K, M, N = H.responses.shape
    rates = np.zeros((K, M))
    power = np.zeros(M)
    flags: tuple[str, ...] = ()
    for m in range(M):
        Hm = H.responses[:, m, :].T                 # (N, K) columns per user
        if K == 1:
            norm = np.linalg.norm(Hm[:, 0])
            D = (Hm / norm) * np.sqrt(P_t)
        else:
            G = Hm.conj().T @ Hm
            cond = np.linalg.cond(G)
            if not np.isfinite(cond) or cond > 1e12:
                G = G + 1e-9 * np.trace(G).real / K * np.eye(K)
                flags = ("regularized_inversion",)
            W = Hm @ np.linalg.inv(G)               # ZF directions, (N, K)
            norms = np.linalg.norm(W, axis=0)
            gains = 1.0 / norms**2
            p_alloc = water_filling(gains, P_t, sigma2)
            D = (W / norms) * np.sqrt(p_alloc)
        power[m] = float(np.sum(np.abs(D) ** 2))
        Pmat = np.abs(H.responses[:, m, :].conj() @ D) ** 2
        signal = np.diag(Pmat)
        interference = Pmat.sum(axis=1) - signal
        rates[:, m] = np.log2(1.0 + signal / (interference + sigma2))
    se = float(rates.sum() / (params.num_subcarriers + params.cyclic_prefix_len))
    return EvalReport(rates, se, power,
                      ConstraintResiduals(0.0, 0.0, 0.0, 0.0), flags)


def ttd_infinite_baseline(H: ChannelInstance, mode: ConfigMode,
                          cfg: OptimizerConfig,
                          warm_starts: tuple[BeamformerSet, ...] = ()) -> EvalReport:
    """Range-relaxed benchmark: only negative delays are penalized."""
    if mode not in (ConfigMode.PARALLEL, ConfigMode.SERIAL_FIXED, ConfigMode.ADAPTIVE):
        raise ValueError("infinite-range baseline needs a TTD mode")
    _, report, _ = optimize_instance(H, mode, cfg, warm_starts=warm_starts,
                                     unbounded_delays=True)
    return report


def conventional_baseline(H: ChannelInstance, cfg: OptimizerConfig) -> EvalReport:
    """PS-only hybrid beamforming (frequency-flat analog stage)."""
    _, report, _ = optimize_instance(H, ConfigMode.PS_ONLY, cfg)
    return report
