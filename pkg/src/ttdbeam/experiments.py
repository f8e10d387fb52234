"""Experiment harness: dataset generation, chained per-mode runs, sweeps.

Sweeps reuse solutions across the axis: each run warm-starts from the next
tighter configuration (smaller delay range, lower power, or structurally
nested mode), so relaxing a constraint can never report a lower spectral
efficiency on paired seeds. Instances are dispatched to a worker pool and
results are keyed by instance id, so aggregation is order independent.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .beamformer import BeamformerSet, ConfigMode, EvalReport
from .channel import ChannelInstance, generate_channel
from .dataio import DatasetRecord, split_tag
from .optimize import OptimizerConfig, full_digital_baseline, optimize_instance
from .params import ArrayGeometry, SystemParams, sample_scenario

FULL_DIGITAL = "full_digital"
PS_ONLY_LABEL = ConfigMode.PS_ONLY.value
INFINITE_SUFFIX = "_inf"

DEFAULT_POWER_DBM = (0.0, 5.0, 10.0, 15.0, 20.0)
DEFAULT_TMAX_PS = (20.0, 40.0, 80.0, 160.0, 320.0, 500.0)


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams
    geometry_kind: str = "ula"
    modes: tuple[ConfigMode, ...] = (ConfigMode.SERIAL_FIXED, ConfigMode.PARALLEL,
                                     ConfigMode.ADAPTIVE)
    instance_count: int = 30
    seed: int = 7
    workers: int = 1
    power_dbm: tuple[float, ...] = DEFAULT_POWER_DBM
    tmax_ps: tuple[float, ...] = DEFAULT_TMAX_PS
    include_infinite: bool = True
    fixed_distance_m: float | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if not self.modes:
            raise ValueError("need at least one configuration mode")
        if list(self.power_dbm) != sorted(self.power_dbm):
            raise ValueError("power sweep values must be ascending")
        if list(self.tmax_ps) != sorted(self.tmax_ps):
            raise ValueError("t_max sweep values must be ascending")


@dataclass(frozen=True)
class ResultRow:
    instance_id: int
    mode: str
    sweep_value: float
    spectral_efficiency: float
    residual_max: float
    wall_time_s: float


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def make_record(params: SystemParams, geom: ArrayGeometry, seed: int, index: int,
                count: int, fixed_distance_m: float | None = None) -> DatasetRecord:
    """Deterministic instance: rng derived from (seed, index)."""
    rng = np.random.default_rng([seed, index])
    scenario = sample_scenario(params, rng, seed=index,
                               fixed_distance_m=fixed_distance_m)
    instance = generate_channel(params, geom, scenario, rng)
    return DatasetRecord(index, split_tag(index, count), instance)


def generate_records(config: ExperimentConfig) -> list[DatasetRecord]:
    geom = ArrayGeometry.from_kind(config.geometry_kind, config.params)
    return [make_record(config.params, geom, config.seed, i, config.instance_count,
                        config.fixed_distance_m)
            for i in range(config.instance_count)]


def _with_params(H: ChannelInstance, params: SystemParams) -> ChannelInstance:
    """Same responses under adjusted constraint parameters (t_max, P_t)."""
    return dataclasses.replace(H, params=params,
                               params_fingerprint=params.fingerprint())


def _row(instance_id: int, label: str, sweep_value: float, report: EvalReport,
         elapsed: float) -> ResultRow:
    return ResultRow(instance_id, label, sweep_value, report.spectral_efficiency,
                     report.constraint_residuals.max_residual(), elapsed)


def _run(H: ChannelInstance, mode: ConfigMode, cfg: OptimizerConfig,
         warm: tuple[BeamformerSet, ...], unbounded: bool = False,
         ) -> tuple[BeamformerSet, EvalReport, float]:
    start = time.perf_counter()
    bf, report, _ = optimize_instance(H, mode, cfg, warm_starts=warm,
                                      unbounded_delays=unbounded)
    return bf, report, time.perf_counter() - start


def evaluate_tmax_sweep(H: ChannelInstance, instance_id: int,
                        modes: tuple[ConfigMode, ...], tmax_seconds: tuple[float, ...],
                        cfg: OptimizerConfig, include_infinite: bool,
                        ) -> list[ResultRow]:
    """All modes across ascending delay ranges, warm-started tight-to-loose."""
    rows: list[ResultRow] = []
    ps_values = [t / 1e-12 for t in tmax_seconds]

    start = time.perf_counter()
    fd = full_digital_baseline(H)
    fd_elapsed = time.perf_counter() - start
    for v in ps_values:
        rows.append(_row(instance_id, FULL_DIGITAL, v, fd, fd_elapsed))

    ps_bf, ps_report, ps_elapsed = _run(H, ConfigMode.PS_ONLY, cfg, ())
    for v in ps_values:
        rows.append(_row(instance_id, PS_ONLY_LABEL, v, ps_report, ps_elapsed))

    serial_at: dict[float, BeamformerSet] = {}
    prev: dict[ConfigMode, BeamformerSet | None] = {m: None for m in modes}
    for t in tmax_seconds:
        Ht = _with_params(H, H.params.with_(max_delay_seconds=t))
        for mode in modes:
            warm = [ps_bf]
            if prev[mode] is not None:
                warm.append(prev[mode])
            if mode is ConfigMode.ADAPTIVE and t in serial_at:
                warm.append(serial_at[t])
            bf, report, elapsed = _run(Ht, mode, cfg, tuple(warm))
            prev[mode] = bf
            if mode is ConfigMode.SERIAL_FIXED:
                serial_at[t] = bf
            rows.append(_row(instance_id, mode.value, t / 1e-12, report, elapsed))
    if include_infinite:
        for mode in modes:
            warm = tuple(x for x in (ps_bf, prev[mode]) if x is not None)
            bf, report, elapsed = _run(H, mode, cfg, warm, unbounded=True)
            rows.append(_row(instance_id, mode.value + INFINITE_SUFFIX,
                             float("inf"), report, elapsed))
    return rows


def evaluate_power_sweep(H: ChannelInstance, instance_id: int,
                         modes: tuple[ConfigMode, ...], power_dbm: tuple[float, ...],
                         cfg: OptimizerConfig, include_infinite: bool,
                         ) -> list[ResultRow]:
    """All modes and baselines across ascending transmit powers."""
    rows: list[ResultRow] = []
    labels = [PS_ONLY_LABEL] + [m.value for m in modes]
    if include_infinite:
        labels += [m.value + INFINITE_SUFFIX for m in modes]
    prev: dict[str, BeamformerSet | None] = {lab: None for lab in labels}
    for dbm in power_dbm:
        Hp = _with_params(H, H.params.with_(transmit_power_watts=dbm_to_watts(dbm)))
        start = time.perf_counter()
        fd = full_digital_baseline(Hp)
        rows.append(_row(instance_id, FULL_DIGITAL, dbm, fd,
                         time.perf_counter() - start))
        warm_ps = tuple(x for x in (prev[PS_ONLY_LABEL],) if x is not None)
        ps_bf, ps_report, elapsed = _run(Hp, ConfigMode.PS_ONLY, cfg, warm_ps)
        prev[PS_ONLY_LABEL] = ps_bf
        rows.append(_row(instance_id, PS_ONLY_LABEL, dbm, ps_report, elapsed))
        serial_bf = None
        for mode in modes:
            warm = [ps_bf]
            if prev[mode.value] is not None:
                warm.append(prev[mode.value])
            if mode is ConfigMode.ADAPTIVE and serial_bf is not None:
                warm.append(serial_bf)
            bf, report, elapsed = _run(Hp, mode, cfg, tuple(warm))
            prev[mode.value] = bf
            if mode is ConfigMode.SERIAL_FIXED:
                serial_bf = bf
            rows.append(_row(instance_id, mode.value, dbm, report, elapsed))
        if include_infinite:
            for mode in modes:
                label = mode.value + INFINITE_SUFFIX
                warm = tuple(x for x in (prev[mode.value], prev[label])
                             if x is not None)
                bf, report, elapsed = _run(Hp, mode, cfg, warm, unbounded=True)
                prev[label] = bf
                rows.append(_row(instance_id, label, dbm, report, elapsed))
    return rows


def evaluate_single(H: ChannelInstance, instance_id: int,
                    modes: tuple[ConfigMode, ...], cfg: OptimizerConfig,
                    include_infinite: bool = False) -> list[ResultRow]:
    """One evaluation per mode at the instance's own parameters."""
    t = H.params.max_delay_seconds
    rows = evaluate_tmax_sweep(H, instance_id, modes, (t,), cfg, include_infinite)
    return rows


# ---- worker-pool dispatch ----

def _sweep_task(args) -> list[ResultRow]:
    (kind, params, geom_kind, seed, index, count, fixed_distance, modes,
     sweep_values, cfg, include_infinite) = args
    geom = ArrayGeometry.from_kind(geom_kind, params)
    record = make_record(params, geom, seed, index, count, fixed_distance)
    H = record.instance
    if kind == "tmax":
        return evaluate_tmax_sweep(H, index, modes, sweep_values, cfg,
                                   include_infinite)
    if kind == "power":
        return evaluate_power_sweep(H, index, modes, sweep_values, cfg,
                                    include_infinite)
    return evaluate_single(H, index, modes, cfg, include_infinite)


def run_sweep(config: ExperimentConfig, kind: str) -> list[ResultRow]:
    """Run a sweep over all instances; kind is 'tmax', 'power', or 'single'."""
    if kind == "tmax":
        sweep_values: tuple[float, ...] = tuple(t * 1e-12 for t in config.tmax_ps)
    elif kind == "power":
        sweep_values = config.power_dbm
    else:
        sweep_values = ()
    tasks = [(kind, config.params, config.geometry_kind, config.seed, i,
              config.instance_count, config.fixed_distance_m, config.modes,
              sweep_values, config.optimizer, config.include_infinite)
             for i in range(config.instance_count)]
    if config.workers > 1:
        with get_context("fork").Pool(config.workers) as pool:
            chunks = pool.map(_sweep_task, tasks)
    else:
        chunks = [_sweep_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r.instance_id, r.mode, r.sweep_value))
    return rows


def mean_by_mode(rows: list[ResultRow]) -> dict[tuple[str, float], float]:
    groups: dict[tuple[str, float], list[float]] = {}
    for r in rows:
        groups.setdefault((r.mode, r.sweep_value), []).append(r.spectral_efficiency)
    return {key: float(np.mean(vals)) for key, vals in groups.items()}


def cdf_table(rows: list[ResultRow]) -> dict[str, np.ndarray]:
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(r.mode, []).append(r.spectral_efficiency)
    return {mode: np.array(sorted(vals)) for mode, vals in groups.items()}
