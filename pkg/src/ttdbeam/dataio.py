"""Structured-text persistence and CSV emission.

Floats are written with repr(), which round-trips IEEE doubles exactly, so
datasets and beamformers reload bit-identically. All formats are plain
line-oriented text with `[section]` headers and `key = value` pairs.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beamformer import (BeamformerSet, ConfigMode, DelayBank, DigitalBeamformer,
                         PhaseShifterBank, SwitchMatrix)
from .channel import ChannelInstance
from .params import ArrayGeometry, Placement, Scenario, SystemParams

DATASET_MAGIC = "ttdbeam-dataset v1"
BEAMFORMER_MAGIC = "ttdbeam-beamformer v1"
MODEL_MAGIC = "ttdbeam-model v1"

_SYSTEM_FIELDS = [f.name for f in dataclasses.fields(SystemParams)]
_INT_FIELDS = {f.name for f in dataclasses.fields(SystemParams) if f.type == "int"}


class FormatError(ValueError):
    """Malformed persistence file."""


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class DatasetRecord:
    index: int
    split: str
    instance: ChannelInstance


def split_tag(index: int, count: int) -> str:
    """60/20/20 split by position: train, then test, then validation."""
    if index < int(0.6 * count):
        return "train"
    if index < int(0.8 * count):
        return "test"
    return "validation"


# ---- dataset files ----

def write_dataset(path: str | Path, params: SystemParams, geom: ArrayGeometry,
                  seed: int, records: list[DatasetRecord]) -> None:
    lines = [DATASET_MAGIC, "[system]"]
    for name in _SYSTEM_FIELDS:
        value = getattr(params, name)
        lines.append(f"{name} = {value if name in _INT_FIELDS else _fmt(value)}")
    lines += ["[geometry]", f"kind = {geom.kind}",
              f"num_antennas = {geom.num_antennas}",
              f"element_spacing_m = {_fmt(geom.element_spacing_m)}",
              f"radius_m = {_fmt(geom.radius_m)}"]
    lines += ["[dataset]", f"seed = {seed}", f"count = {len(records)}",
              f"fingerprint = {params.fingerprint()}"]
    for rec in records:
        H = rec.instance
        lines += ["[instance]", f"index = {rec.index}", f"split = {rec.split}",
                  f"scenario_seed = {H.scenario.rng_seed}",
                  f"noise_power_watts_per_subcarrier = "
                  f"{_fmt(H.noise_power_watts_per_subcarrier)}"]
        for p in H.scenario.user_placements:
            lines.append(f"u {_fmt(p.distance_m)} {_fmt(p.angle_rad)}")
        for k, paths in enumerate(H.scenario.scatterer_placements):
            for p in paths:
                lines.append(f"s {k} {_fmt(p.distance_m)} {_fmt(p.angle_rad)}")
        K, M, N = H.responses.shape
        for k in range(K):
            for m in range(M):
                row = H.responses[k, m]
                inter = np.empty(2 * N)
                inter[0::2] = row.real
                inter[1::2] = row.imag
                lines.append(f"h {k} {m} " + " ".join(_fmt(v) for v in inter))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path: str | Path) -> tuple[SystemParams, ArrayGeometry, int,
                                            list[DatasetRecord]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a {DATASET_MAGIC} file")
    system: dict = {}
    geometry: dict = {}
    meta: dict = {}
    records: list[DatasetRecord] = []
    section = None
    current: dict | None = None

    def close_instance():
        if current is None:
            return
        params = SystemParams(**system)
        K = params.num_users
        L_k = params.num_scatterers_per_user
        users = tuple(Placement(r, th) for r, th in current["users"])
        scatterers = tuple(
            tuple(Placement(r, th) for r, th in current["scatterers"][k])
            for k in range(K))
        scenario = Scenario(users, scatterers, rng_seed=current["scenario_seed"])
        if any(len(s) != L_k for s in scenario.scatterer_placements):
            raise FormatError("scatterer rows do not match num_scatterers_per_user")
        h = np.zeros((K, params.num_subcarriers, params.num_antennas), dtype=complex)
        for (k, m), values in current["h"].items():
            h[k, m] = values[0::2] + 1j * values[1::2]
        instance = ChannelInstance(
            responses=h, scenario=scenario, params=params,
            params_fingerprint=params.fingerprint(),
            noise_power_watts_per_subcarrier=current["noise"])
        records.append(DatasetRecord(current["index"], current["split"], instance))

    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("["):
            if line == "[instance]":
                close_instance()
                current = {"users": [], "scatterers": {}, "h": {}}
                section = "instance"
            else:
                section = line[1:-1]
            continue
        if section == "instance":
            if line.startswith("u "):
                _, r, th = line.split()
                current["users"].append((float(r), float(th)))
            elif line.startswith("s "):
                _, k, r, th = line.split()
                current["scatterers"].setdefault(int(k), []).append(
                    (float(r), float(th)))
            elif line.startswith("h "):
                parts = line.split()
                k, m = int(parts[1]), int(parts[2])
                current["h"][(k, m)] = np.array([float(v) for v in parts[3:]])
            else:
                key, _, value = line.partition(" = ")
                if key == "index":
                    current["index"] = int(value)
                elif key == "split":
                    current["split"] = value
                elif key == "scenario_seed":
                    current["scenario_seed"] = int(value)
                elif key == "noise_power_watts_per_subcarrier":
                    current["noise"] = float(value)
        else:
            key, _, value = line.partition(" = ")
            if section == "system":
                system[key] = int(value) if key in _INT_FIELDS else float(value)
            elif section == "geometry":
                geometry[key] = value if key == "kind" else (
                    int(value) if key == "num_antennas" else float(value))
            elif section == "dataset":
                meta[key] = value
    close_instance()
    params = SystemParams(**system)
    geom = ArrayGeometry(kind=geometry["kind"],
                         num_antennas=geometry["num_antennas"],
                         element_spacing_m=geometry.get("element_spacing_m", 0.0),
                         radius_m=geometry.get("radius_m", 0.0))
    return params, geom, int(meta.get("seed", 0)), records


# ---- beamformer files ----

def write_beamformer(path: str | Path, bf: BeamformerSet) -> None:
    N, n_rf = bf.ps.phases.shape
    L = bf.num_ttds
    M = bf.digital.weights.shape[0]
    K = bf.digital.weights.shape[2]
    lines = [BEAMFORMER_MAGIC,
             f"mode = {bf.config_mode.value}",
             f"unbounded_delays = {int(bf.unbounded_delays)}",
             f"shape = {N} {n_rf} {L} {M} {K}"]
    for n in range(N):
        row = bf.ps.phases[n]
        inter = []
        for z in row:
            inter += [_fmt(z.real), _fmt(z.imag)]
        lines.append("ps " + " ".join(inter))
    for l in range(L):
        lines.append("delay " + " ".join(_fmt(v) for v in
                                         bf.delays.incremental_delays[l]))
    for i in range(n_rf):
        lines.append("switch " + " ".join(str(int(v)) for v in bf.switches.perms[i]))
    for m in range(M):
        for i in range(n_rf):
            row = bf.digital.weights[m, i]
            inter = []
            for z in row:
                inter += [_fmt(z.real), _fmt(z.imag)]
            lines.append(f"digital {m} {i} " + " ".join(inter))
    Path(path).write_text("\n".join(lines) + "\n")


def read_beamformer(path: str | Path) -> BeamformerSet:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != BEAMFORMER_MAGIC:
        raise FormatError(f"{path}: not a {BEAMFORMER_MAGIC} file")
    header: dict = {}
    ps_rows, delay_rows, switch_rows = [], [], []
    digital: dict = {}
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("ps "):
            vals = np.array([float(v) for v in line.split()[1:]])
            ps_rows.append(vals[0::2] + 1j * vals[1::2])
        elif line.startswith("delay "):
            delay_rows.append([float(v) for v in line.split()[1:]])
        elif line.startswith("switch "):
            switch_rows.append([int(v) for v in line.split()[1:]])
        elif line.startswith("digital "):
            parts = line.split()
            m, i = int(parts[1]), int(parts[2])
            vals = np.array([float(v) for v in parts[3:]])
            digital[(m, i)] = vals[0::2] + 1j * vals[1::2]
        else:
            key, _, value = line.partition(" = ")
            header[key] = value
    N, n_rf, L, M, K = (int(v) for v in header["shape"].split())
    weights = np.zeros((M, n_rf, K), dtype=complex)
    for (m, i), row in digital.items():
        weights[m, i] = row
    return BeamformerSet(
        ps=PhaseShifterBank(np.array(ps_rows)),
        delays=DelayBank(np.array(delay_rows)),
        switches=SwitchMatrix(np.array(switch_rows, dtype=int)),
        digital=DigitalBeamformer(weights),
        config_mode=ConfigMode(header["mode"]),
        unbounded_delays=bool(int(header.get("unbounded_delays", "0"))),
    )


# ---- neural model files ----

def write_model(path: str | Path, weights: dict[str, np.ndarray]) -> None:
    lines = [MODEL_MAGIC]
    for name in sorted(weights):
        arr = np.asarray(weights[name])
        shape = ",".join(str(s) for s in arr.shape) or "-"
        lines.append(f"weight {name} {shape}")
        lines.append(" ".join(_fmt(v) for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_model(path: str | Path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a {MODEL_MAGIC} file")
    weights: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        if not lines[i].startswith("weight "):
            i += 1
            continue
        _, name, shape_s = lines[i].split()
        shape = () if shape_s == "-" else tuple(int(s) for s in shape_s.split(","))
        values = np.array([float(v) for v in lines[i + 1].split()])
        weights[name] = values.reshape(shape)
        i += 2
    return weights


# ---- CSV emission ----

def write_trace_csv(path: str | Path, trace: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "l_eff", "l_ps", "l_ttd", "l_pc", "total"])
        for it, row in enumerate(np.atleast_2d(trace)):
            writer.writerow([it] + [repr(float(v)) for v in row])


def write_results_csv(path: str | Path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "mode", "sweep_value",
                         "spectral_efficiency", "residual_max", "wall_time_s"])
        for r in rows:
            writer.writerow([r.instance_id, r.mode, repr(float(r.sweep_value)),
                             repr(float(r.spectral_efficiency)),
                             repr(float(r.residual_max)),
                             repr(float(r.wall_time_s))])


def write_summary_csv(path: str | Path, means: dict[tuple[str, float], float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "sweep_value", "mean_spectral_efficiency"])
        for (mode, value), se in sorted(means.items()):
            writer.writerow([mode, repr(float(value)), repr(float(se))])


def write_cdf_csv(path: str | Path, table: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "spectral_efficiency", "cdf"])
        for mode, values in sorted(table.items()):
            values = np.sort(values)
            n = len(values)
            for j, v in enumerate(values):
                writer.writerow([mode, repr(float(v)), repr((j + 1) / n)])


def write_loss_curve_csv(path: str | Path, curve: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for e, v in enumerate(curve, start=1):
            writer.writerow([e, repr(float(v))])


# ---- configuration files ----

def load_config(path: str | Path | None) -> dict[str, dict[str, str]]:
    """INI-style config: [system], [experiment], [optimizer] sections."""
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise FormatError(f"config file {path} not found or unreadable")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def apply_system_overrides(params: SystemParams,
                           overrides: dict[str, str]) -> SystemParams:
    kwargs = {}
    for key, value in overrides.items():
        if key not in _SYSTEM_FIELDS:
            raise FormatError(f"unknown system parameter {key!r}")
        kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
    return params.with_(**kwargs) if kwargs else params
