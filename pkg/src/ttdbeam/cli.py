"""Command-line harness.

Subcommands: generate, optimize, sweep-power, sweep-tmax, cdf, count,
assign, gradcheck, mini-train. Global flags: --config, --seed, --out-dir,
--workers; any SystemParams field can be overridden with repeated
--set name=value flags (names match the config file exactly).

Exit codes: 0 success, then machine-readable categories
usage=2, config=3, io=4, data=5, compute=6.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import dataio, experiments
from .assignment import hungarian_max
from .beamformer import ConfigMode, count_configurations
from .dataio import FormatError, load_config
from .gradcheck import check_total_loss, run_op_suite
from .neural import mini_train
from .optimize import OptimizerConfig, optimize_instance
from .params import ArrayGeometry, SystemParams

ERROR_CODES = {"usage": 2, "config": 3, "io": 4, "data": 5, "compute": 6}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _parse_modes(text: str) -> tuple[ConfigMode, ...]:
    out = []
    for token in text.split(","):
        token = token.strip()
        try:
            out.append(ConfigMode(token))
        except ValueError:
            raise CliError("usage", f"unknown mode {token!r}")
    return tuple(out)


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise CliError("usage", f"expected comma-separated numbers, got {text!r}")


def _build_params(args, config: dict) -> SystemParams:
    params = SystemParams.desk_scale()
    try:
        if "system" in config:
            params = dataio.apply_system_overrides(params, config["system"])
        overrides = {}
        for item in args.set or []:
            key, _, value = item.partition("=")
            if not value:
                raise CliError("usage", f"--set expects name=value, got {item!r}")
            overrides[key] = value
        params = dataio.apply_system_overrides(params, overrides)
    except (FormatError, ValueError) as exc:
        raise CliError("config", str(exc))
    return params


def _build_optimizer(args, config: dict) -> OptimizerConfig:
    section = dict(config.get("optimizer", {}))
    def pick(name, cast, default):
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            return cli_val
        if name in section:
            return cast(section[name])
        return default
    return OptimizerConfig(
        step_size=pick("step_size", float, 1e-2),
        max_iters=pick("max_iters", int, 150),
        num_restarts=pick("num_restarts", int, 3),
        seed=args.seed,
        convergence_tol=pick("convergence_tol", float, 1e-7),
    )


def _experiment_config(args, config: dict, params: SystemParams,
                       **extra) -> experiments.ExperimentConfig:
    section = dict(config.get("experiment", {}))
    geometry = getattr(args, "geometry", None) or section.get("geometry", "ula")
    modes = getattr(args, "modes", None)
    modes = _parse_modes(modes) if modes else _parse_modes(
        section.get("modes", "serial,parallel,adaptive"))
    count = getattr(args, "instances", None) or int(section.get("instances", 30))
    kwargs = dict(params=params, geometry_kind=geometry, modes=modes,
                  instance_count=count, seed=args.seed, workers=args.workers,
                  optimizer=_build_optimizer(args, config))
    kwargs.update(extra)
    try:
        return experiments.ExperimentConfig(**kwargs)
    except ValueError as exc:
        raise CliError("usage", str(exc))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---- subcommands ----

def cmd_generate(args, config) -> int:
    params = _build_params(args, config)
    cfg = _experiment_config(args, config, params,
                             fixed_distance_m=args.fixed_distance)
    records = experiments.generate_records(cfg)
    geom = ArrayGeometry.from_kind(cfg.geometry_kind, params)
    out = _out_dir(args) / (args.output or "dataset.txt")
    dataio.write_dataset(out, params, geom, cfg.seed, records)
    print(f"wrote {len(records)} instances to {out}")
    return 0


def cmd_optimize(args, config) -> int:
    try:
        params, geom, _, records = dataio.read_dataset(args.dataset)
    except (OSError, FormatError) as exc:
        raise CliError("io", f"cannot read dataset: {exc}")
    if not 0 <= args.instance < len(records):
        raise CliError("usage", f"instance index outside 0..{len(records) - 1}")
    H = records[args.instance].instance
    mode = _parse_modes(args.mode)[0]
    cfg = _build_optimizer(args, config)
    bf, report, trace = optimize_instance(H, mode, cfg)
    out = _out_dir(args)
    dataio.write_beamformer(out / f"beamformer_{args.instance}_{mode.value}.txt", bf)
    dataio.write_trace_csv(out / f"trace_{args.instance}_{mode.value}.csv", trace)
    print(f"instance {args.instance} mode {mode.value}: "
          f"SE = {report.spectral_efficiency:.6f} bit/s/Hz, "
          f"max residual = {report.constraint_residuals.max_residual():.3e}")
    return 0


def _run_sweep(args, config, kind: str) -> int:
    params = _build_params(args, config)
    section = dict(config.get("experiment", {}))
    extra = {}
    if kind == "power":
        text = args.powers_dbm or section.get("power_dbm")
        if text:
            extra["power_dbm"] = _parse_floats(text)
    if kind == "tmax":
        text = args.tmax_ps or section.get("tmax_ps")
        if text:
            extra["tmax_ps"] = _parse_floats(text)
    if kind == "single":
        extra["fixed_distance_m"] = 10.0
    cfg = _experiment_config(args, config, params, **extra)
    rows = experiments.run_sweep(cfg, kind)
    out = _out_dir(args)
    name = {"power": "sweep_power", "tmax": "sweep_tmax", "single": "cdf_runs"}[kind]
    dataio.write_results_csv(out / f"{name}.csv", rows)
    if kind == "single":
        dataio.write_cdf_csv(out / "cdf.csv", experiments.cdf_table(rows))
        print(f"wrote {out / 'cdf.csv'}")
    else:
        means = experiments.mean_by_mode(rows)
        dataio.write_summary_csv(out / f"{name}_summary.csv", means)
        for (mode, value), se in sorted(means.items()):
            print(f"{mode:16s} @ {value:g}: mean SE = {se:.4f}")
    return 0


def cmd_sweep_power(args, config) -> int:
    return _run_sweep(args, config, "power")


def cmd_sweep_tmax(args, config) -> int:
    return _run_sweep(args, config, "tmax")


def cmd_cdf(args, config) -> int:
    return _run_sweep(args, config, "single")


def cmd_count(args, config) -> int:
    try:
        unconstrained, equal_sized = count_configurations(args.N, args.L)
    except ValueError as exc:
        raise CliError("usage", str(exc))
    print(f"unconstrained = {unconstrained}")
    print(f"              ~ {float(unconstrained):.4e}")
    print(f"equal_sized   = {equal_sized}")
    print(f"              ~ {float(equal_sized):.4e}")
    return 0


def cmd_assign(args, config) -> int:
    try:
        with open(args.matrix, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    except OSError as exc:
        raise CliError("io", f"cannot read matrix: {exc}")
    except ValueError as exc:
        raise CliError("data", f"matrix entries must be numbers: {exc}")
    try:
        result = hungarian_max(np.array(rows))
    except ValueError as exc:
        raise CliError("data", str(exc))
    print("permutation:", " ".join(str(v) for v in result.permutation))
    print(f"total_cost: {result.total_cost!r}")
    return 0


def cmd_gradcheck(args, config) -> int:
    points = args.points
    report = run_op_suite(num_points=points, seed=args.seed)
    failed = False
    for name, err in sorted(report.items()):
        status = "ok" if err < 1e-5 else "FAIL"
        if err >= 1e-5:
            failed = True
        print(f"op {name:12s} max rel err = {err:.3e}  [{status}]")
    total_err = check_total_loss(num_points=points, seed=args.seed)
    status = "ok" if total_err < 1e-5 else "FAIL"
    if total_err >= 1e-5:
        failed = True
    print(f"total_loss      max rel err = {total_err:.3e}  [{status}]")
    if failed:
        raise CliError("compute", "gradient check exceeded 1e-5 relative error")
    return 0


def cmd_mini_train(args, config) -> int:
    params = SystemParams(num_antennas=args.antennas, num_ttds_per_chain=4,
                          num_rf_chains=2, num_users=2, num_subcarriers=4,
                          cyclic_prefix_len=2)
    geom = ArrayGeometry.from_kind(args.geometry or "ula", params)
    dataset = [experiments.make_record(params, geom, args.seed, i,
                                       args.instances).instance
               for i in range(args.instances)]
    try:
        model, diag = mini_train(params, dataset, epochs=args.epochs,
                                 lr=args.lr, seed=args.seed)
    except ValueError as exc:
        raise CliError("usage", str(exc))
    out = _out_dir(args)
    dataio.write_loss_curve_csv(out / "loss_curve.csv", diag.loss_curve)
    dataio.write_model(out / "model.txt", model.weights)
    first, last = diag.loss_curve[0], diag.loss_curve[-1]
    print(f"epochs: {args.epochs}, loss {first:.4f} -> {last:.4f}, "
          f"phi modulus residual {diag.phi_modulus_residual:.4f}, "
          f"permutations valid: {diag.permutations_valid}")
    return 0


# ---- parser ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttdbeam",
        description="Near-field wideband hybrid beamforming with adaptive TTDs")
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--set", action="append", metavar="NAME=VALUE",
                        help="override a SystemParams field")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_optimizer_flags(p):
        p.add_argument("--step-size", dest="step_size", type=float, default=None)
        p.add_argument("--max-iters", dest="max_iters", type=int, default=None)
        p.add_argument("--restarts", dest="num_restarts", type=int, default=None)

    p = sub.add_parser("generate", help="generate a channel dataset file")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--geometry", choices=["ula", "uca"], default=None)
    p.add_argument("--fixed-distance", type=float, default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("optimize", help="optimize one dataset instance")
    p.add_argument("--dataset", required=True)
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--mode", default="serial")
    add_optimizer_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep-power", help="mean SE versus transmit power")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--geometry", choices=["ula", "uca"], default=None)
    p.add_argument("--modes", default=None)
    p.add_argument("--powers-dbm", default=None)
    add_optimizer_flags(p)
    p.set_defaults(func=cmd_sweep_power)

    p = sub.add_parser("sweep-tmax", help="mean SE versus maximum TTD delay")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--geometry", choices=["ula", "uca"], default=None)
    p.add_argument("--modes", default=None)
    p.add_argument("--tmax-ps", default=None)
    add_optimizer_flags(p)
    p.set_defaults(func=cmd_sweep_tmax)

    p = sub.add_parser("cdf", help="SE distribution at fixed 10 m user distance")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--geometry", choices=["ula", "uca"], default=None)
    p.add_argument("--modes", default=None)
    add_optimizer_flags(p)
    p.set_defaults(func=cmd_cdf)

    p = sub.add_parser("count", help="switch configuration counts")
    p.add_argument("N", type=int)
    p.add_argument("L", type=int)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("assign", help="solve a max-cost assignment from CSV")
    p.add_argument("--matrix", required=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--points", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("mini-train", help="toy end-to-end unsupervised training")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--instances", type=int, default=64)
    p.add_argument("--antennas", type=int, default=16)
    p.add_argument("--geometry", choices=["ula", "uca"], default=None)
    p.add_argument("--lr", type=float, default=1e-2)
    p.set_defaults(func=cmd_mini_train)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except FormatError as exc:
        print(f"error: category=config {exc}", file=sys.stderr)
        return ERROR_CODES["config"]
    try:
        return args.func(args, config)
    except CliError as exc:
        print(f"error: category={exc.category} {exc}", file=sys.stderr)
        return ERROR_CODES[exc.category]
    except OSError as exc:
        print(f"error: category=io {exc}", file=sys.stderr)
        return ERROR_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
