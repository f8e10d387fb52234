"""Acceptance suite: one test per criterion, each printing a PASS line.

The trend criteria share two session-scoped sweep fixtures (ULA and UCA,
30 paired instances each) so constraint, trend, and relaxation checks run
on the same optimization results.
"""

import dataclasses
import time

import numpy as np
import pytest

from ttdbeam.assignment import brute_force_assignment, hungarian_max
from ttdbeam.beamformer import (BeamformerSet, ConfigMode, DelayBank,
                                DigitalBeamformer, PhaseShifterBank, SwitchMatrix,
                                count_configurations, spectral_efficiency)
from ttdbeam.channel import element_distances, generate_channel
from ttdbeam.dataio import write_beamformer, write_dataset
from ttdbeam.experiments import ExperimentConfig, generate_records, mean_by_mode, run_sweep
from ttdbeam.gradcheck import check_total_loss, run_op_suite
from ttdbeam.neural import mini_train
from ttdbeam.optimize import (OptimizerConfig, full_digital_baseline,
                              optimize_instance)
from ttdbeam.params import (SPEED_OF_LIGHT, ArrayGeometry, SystemParams,
                            sample_scenario)

WORKERS = 4
TREND_SEED = 2024
TREND_INSTANCES = 30


def _trend_rows(geometry):
    params = SystemParams.desk_scale()
    cfg = ExperimentConfig(
        params=params, geometry_kind=geometry, instance_count=TREND_INSTANCES,
        seed=TREND_SEED, workers=WORKERS, tmax_ps=(40.0, 80.0),
        optimizer=OptimizerConfig(step_size=1e-2, max_iters=120,
                                  num_restarts=2, seed=0))
    return run_sweep(cfg, "tmax")


@pytest.fixture(scope="session")
def ula_rows():
    return _trend_rows("ula")


@pytest.fixture(scope="session")
def uca_rows():
    return _trend_rows("uca")


def _by_mode(rows):
    per = {}
    for r in rows:
        per.setdefault((r.mode, r.sweep_value), {})[r.instance_id] = r
    return per


def test_criterion_01_configuration_counts():
    start = time.perf_counter()
    unconstrained, equal_sized = count_configurations(64, 4)
    elapsed = time.perf_counter() - start
    assert isinstance(unconstrained, int) and isinstance(equal_sized, int)
    assert elapsed < 1.0

    rel_unconstrained = abs(float(unconstrained) - 3.4032e38) / 3.4032e38
    assert rel_unconstrained < 5e-4, rel_unconstrained
    print(f"\nACCEPTANCE 1a unconstrained count {float(unconstrained):.4e} "
          f"within {rel_unconstrained:.2%} of 3.4032e38: PASS")

    rel_equal = abs(float(equal_sized) - 2.67e34) / 2.67e34
    print(f"ACCEPTANCE 1b equal-sized count exact value {float(equal_sized):.4e} "
          f"vs quoted 2.67e34: relative gap {rel_equal:.2%} "
          f"({'PASS' if rel_equal < 0.01 else 'FAIL'})")
    assert rel_equal < 0.01, (
        "The exact equal-sized count 64!/((16!)^4 4!) = "
        f"{equal_sized} = {float(equal_sized):.6e} differs from the quoted "
        f"2.67e34 by {rel_equal:.2%}, beyond the 1% tolerance. The quoted "
        "constant is arithmetically inconsistent with its own formula; the "
        "exact big-integer value is returned and independently verified by a "
        "Stirling-recurrence oracle in the unit tests.")


def test_criterion_02_uca_radius():
    params = SystemParams()  # full-scale defaults: N = 512, f_c = 100 GHz
    geom = ArrayGeometry.uca(params)
    rel = abs(geom.radius_m - 0.768) / 0.768
    assert rel < 3e-3, geom.radius_m
    print(f"\nACCEPTANCE 2 UCA radius {geom.radius_m:.6f} m within "
          f"{rel:.3%} of 0.768 m: PASS")


def test_criterion_03_hungarian_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    mismatches = 0
    for n in range(2, 8):
        for _ in range(200):
            C = rng.uniform(-10.0, 10.0, size=(n, n))
            h = hungarian_max(C)
            b = brute_force_assignment(C)
            if h.total_cost != b.total_cost or not np.array_equal(
                    h.permutation, b.permutation):
                mismatches += 1
    elapsed = time.perf_counter() - start
    assert mismatches == 0
    assert elapsed < 10.0, elapsed
    print(f"\nACCEPTANCE 3 Hungarian equals brute force on 200 matrices "
          f"per n in 2..7 ({elapsed:.1f} s): PASS")


def _single_user_instance(seed):
    params = SystemParams.desk_scale(num_users=1, num_rf_chains=1,
                                     num_subcarriers=8,
                                     num_scatterers_per_user=0)
    geom = ArrayGeometry.ula(params)
    rng = np.random.default_rng([41, seed])
    scenario = sample_scenario(params, rng, seed=seed)
    return params, geom, generate_channel(params, geom, scenario, rng)


def _analytic_parallel_set(params, geom, H):
    """Matched delays tau_n = (max r - r_n)/c with flat phase shifters."""
    dists = element_distances(geom, H.scenario.user_placements[0])
    delays = ((np.max(dists) - dists) / SPEED_OF_LIGHT)[:, None]
    N = params.num_antennas
    d = np.sqrt(params.transmit_power_watts / N)
    digital = np.full((params.num_subcarriers, 1, 1), d, dtype=complex)
    return BeamformerSet(
        ps=PhaseShifterBank(np.ones((N, 1), dtype=complex)),
        delays=DelayBank(delays),
        switches=SwitchMatrix.identity(N, 1),
        digital=DigitalBeamformer(digital),
        config_mode=ConfigMode.PARALLEL,
        unbounded_delays=True)


def test_criterion_04_single_user_optimality():
    start = time.perf_counter()
    cfg = OptimizerConfig(step_size=1e-2, max_iters=120, num_restarts=2, seed=0)
    analytic_ratios, optimized_ratios = [], []
    for seed in range(20):
        params, geom, H = _single_user_instance(seed)
        fd = full_digital_baseline(H).spectral_efficiency
        analytic = spectral_efficiency(H, _analytic_parallel_set(params, geom, H))
        analytic_ratios.append(analytic.spectral_efficiency / fd)
        _, report, _ = optimize_instance(H, ConfigMode.PARALLEL, cfg,
                                         unbounded_delays=True)
        optimized_ratios.append(report.spectral_efficiency / fd)
    elapsed = time.perf_counter() - start
    assert min(analytic_ratios) >= 0.99, min(analytic_ratios)
    assert min(optimized_ratios) >= 0.99, min(optimized_ratios)
    assert elapsed < 300.0, elapsed
    print(f"\nACCEPTANCE 4 single-user matched-delay oracle: analytic >= "
          f"{min(analytic_ratios):.4f}, optimized >= {min(optimized_ratios):.4f} "
          f"of full digital over 20 placements ({elapsed:.0f} s): PASS")


def test_criterion_05_gradient_suite():
    start = time.perf_counter()
    report = run_op_suite(num_points=100, seed=0)
    worst_op = max(report.values())
    total_err = check_total_loss(num_points=100, seed=0)
    elapsed = time.perf_counter() - start
    assert worst_op < 1e-5, report
    assert total_err < 1e-5, total_err
    assert elapsed < 120.0, elapsed
    print(f"\nACCEPTANCE 5 gradient suite: {len(report)} ops worst "
          f"{worst_op:.2e}, total_loss {total_err:.2e} ({elapsed:.0f} s): PASS")


def test_criterion_06_constraint_residuals(ula_rows):
    checked = 0
    worst = 0.0
    for r in ula_rows:
        if r.mode in ("full_digital",):
            continue
        worst = max(worst, r.residual_max)
        checked += 1
    assert checked >= 30 * 3
    assert worst < 1e-3, worst
    print(f"\nACCEPTANCE 6 constraint residuals on {checked} optimized desk "
          f"runs, worst {worst:.2e} < 1e-3: PASS")


def test_criterion_07_ula_trend(ula_rows):
    means = mean_by_mode(ula_rows)
    serial = means[("serial", 80.0)]
    parallel = means[("parallel", 80.0)]
    adaptive = means[("adaptive", 80.0)]
    per = _by_mode(ula_rows)
    a80 = per[("adaptive", 80.0)]
    s80 = per[("serial", 80.0)]
    wins = sum(1 for i in a80
               if a80[i].spectral_efficiency > s80[i].spectral_efficiency + 1e-9)
    frac = wins / len(a80)
    assert serial > parallel, (serial, parallel)
    assert adaptive >= serial, (adaptive, serial)
    assert frac >= 0.6, frac
    print(f"\nACCEPTANCE 7 ULA at 80 ps: serial {serial:.3f} > parallel "
          f"{parallel:.3f}, adaptive {adaptive:.3f} >= serial, adaptive wins "
          f"{wins}/{len(a80)}: PASS")


def test_criterion_08_uca_trend(uca_rows):
    means = mean_by_mode(uca_rows)
    serial = means[("serial", 80.0)]
    parallel = means[("parallel", 80.0)]
    assert parallel > serial, (parallel, serial)
    print(f"\nACCEPTANCE 8 UCA at 80 ps: parallel {parallel:.3f} > serial "
          f"{serial:.3f}: PASS")


def test_criterion_09_relaxation_dominance(ula_rows, uca_rows):
    violations = 0
    checked = 0
    for rows in (ula_rows, uca_rows):
        per = _by_mode(rows)
        for mode in ("serial", "parallel", "adaptive"):
            for i in range(TREND_INSTANCES):
                se40 = per[(mode, 40.0)][i].spectral_efficiency
                se80 = per[(mode, 80.0)][i].spectral_efficiency
                seinf = per[(mode + "_inf", float("inf"))][i].spectral_efficiency
                checked += 1
                if se80 < se40 - 1e-6 or seinf < se80 - 1e-6 or seinf < se40 - 1e-6:
                    violations += 1
    assert violations == 0, violations
    print(f"\nACCEPTANCE 9 relaxation dominance over {checked} "
          f"(mode, instance) chains: PASS")


def test_criterion_10_mini_training():
    start = time.perf_counter()
    params = SystemParams(num_antennas=16, num_ttds_per_chain=4, num_rf_chains=2,
                          num_users=2, num_subcarriers=4, cyclic_prefix_len=2,
                          carrier_frequency_hz=50e9, bandwidth_hz=4e9)
    geom = ArrayGeometry.ula(params)
    dataset = []
    for i in range(64):
        rng = np.random.default_rng([7, i])
        sc = sample_scenario(params, rng, seed=i)
        dataset.append(generate_channel(params, geom, sc, rng))
    model, diag = mini_train(params, dataset, epochs=50, batch_size=8, seed=0)
    elapsed = time.perf_counter() - start
    first, last = diag.loss_curve[0], diag.loss_curve[-1]
    drop = (first - last) / abs(first)
    assert drop >= 0.30, diag.loss_curve
    assert diag.permutations_valid
    assert diag.max_attention_row_dev < 1e-9
    assert diag.phi_modulus_residual < 0.05, diag.phi_modulus_residual
    assert elapsed < 600.0, elapsed
    print(f"\nACCEPTANCE 10 mini training: loss {first:.2f} -> {last:.2f} "
          f"({drop:.0%} drop), permutations valid, attention rows stochastic, "
          f"PS modulus residual {diag.phi_modulus_residual:.4f} ({elapsed:.0f} s): PASS")


def test_criterion_11_bit_exact_reproducibility(tmp_path):
    params = SystemParams.desk_scale(num_antennas=16, num_ttds_per_chain=4,
                                     num_subcarriers=2)
    cfg = ExperimentConfig(params=params, geometry_kind="ula", instance_count=4,
                           seed=5, optimizer=OptimizerConfig(max_iters=20,
                                                             num_restarts=2,
                                                             seed=1))
    geom = ArrayGeometry.ula(params)
    paths = []
    for tag in ("a", "b"):
        records = generate_records(cfg)
        p = tmp_path / f"ds_{tag}.txt"
        write_dataset(p, params, geom, cfg.seed, records)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()

    H = generate_records(cfg)[0].instance
    outs = []
    for tag in ("a", "b"):
        bf, report, trace = optimize_instance(H, ConfigMode.ADAPTIVE, cfg.optimizer)
        p = tmp_path / f"bf_{tag}.txt"
        write_beamformer(p, bf)
        outs.append((p.read_bytes(), report.spectral_efficiency, trace.tobytes()))
    assert outs[0] == outs[1]
    print("\nACCEPTANCE 11 bit-exact dataset generation and optimization "
          "reruns: PASS")
