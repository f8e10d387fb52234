import csv
import numpy as np
import pytest

from ttdbeam.cli import main
from ttdbeam.dataio import read_dataset


def run(args):
    return main([str(a) for a in args])


def test_count_command(capsys):
    assert run(["count", "64", "4"]) == 0
    out = capsys.readouterr().out
    assert "340282353186203182404005133242629164024" in out
    assert "3.4028e+38" in out
    assert "27588448683790477691829516810909225" in out


def test_count_command_bad_args(capsys):
    assert run(["count", "10", "4"]) == 2
    assert "category=usage" in capsys.readouterr().err


def test_generate_deterministic(tmp_path):
    base = ["--out-dir", tmp_path, "--seed", "5", "generate", "--instances", "4",
            "--geometry", "ula", "--set"]
    args = ["--out-dir", str(tmp_path), "--seed", "5",
            "--set", "num_antennas=16", "--set", "num_ttds_per_chain=4",
            "generate", "--instances", "4", "--geometry", "ula",
            "--output", "a.txt"]
    assert main(args) == 0
    args[args.index("a.txt")] = "b.txt"
    assert main(args) == 0
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    params, geom, seed, records = read_dataset(tmp_path / "a.txt")
    assert params.num_antennas == 16
    assert len(records) == 4
    assert [r.split for r in records] == ["train", "train", "test", "validation"]


def test_generate_split_percentages(tmp_path):
    assert main(["--out-dir", str(tmp_path), "--seed", "1",
                 "--set", "num_antennas=8", "--set", "num_ttds_per_chain=2",
                 "--set", "num_subcarriers=2", "--set", "num_scatterers_per_user=1",
                 "generate", "--instances", "10"]) == 0
    _, _, _, records = read_dataset(tmp_path / "dataset.txt")
    tags = [r.split for r in records]
    assert tags.count("train") == 6
    assert tags.count("test") == 2
    assert tags.count("validation") == 2


def test_optimize_command(tmp_path, capsys):
    common = ["--out-dir", str(tmp_path), "--seed", "2",
              "--set", "num_antennas=16", "--set", "num_ttds_per_chain=4",
              "--set", "num_subcarriers=2"]
    assert main(common + ["generate", "--instances", "1"]) == 0
    assert main(common + ["optimize", "--dataset", str(tmp_path / "dataset.txt"),
                          "--instance", "0", "--mode", "serial",
                          "--max-iters", "10", "--restarts", "1"]) == 0
    out = capsys.readouterr().out
    assert "SE = " in out
    assert (tmp_path / "beamformer_0_serial.txt").exists()
    assert (tmp_path / "trace_0_serial.csv").exists()


def test_optimize_bad_instance_index(tmp_path, capsys):
    common = ["--out-dir", str(tmp_path), "--seed", "2",
              "--set", "num_antennas=8", "--set", "num_ttds_per_chain=2",
              "--set", "num_subcarriers=2"]
    assert main(common + ["generate", "--instances", "1"]) == 0
    code = main(common + ["optimize", "--dataset", str(tmp_path / "dataset.txt"),
                          "--instance", "5"])
    assert code == 2
    assert "category=usage" in capsys.readouterr().err


def test_optimize_missing_dataset(tmp_path, capsys):
    code = main(["--out-dir", str(tmp_path), "optimize", "--dataset",
                 str(tmp_path / "nope.txt")])
    assert code == 4
    assert "category=io" in capsys.readouterr().err


def test_assign_command(tmp_path, capsys):
    m = tmp_path / "m.csv"
    with open(m, "w", newline="") as fh:
        csv.writer(fh).writerows([[1, 2], [3, 1]])
    assert main(["assign", "--matrix", str(m)]) == 0
    out = capsys.readouterr().out
    assert "permutation: 1 0" in out
    assert "5.0" in out


def test_assign_bad_matrix(tmp_path, capsys):
    m = tmp_path / "m.csv"
    with open(m, "w", newline="") as fh:
        csv.writer(fh).writerows([[1, 2, 3], [4, 5, 6]])
    assert main(["assign", "--matrix", str(m)]) == 5
    assert "category=data" in capsys.readouterr().err


def test_gradcheck_command_small(capsys):
    assert main(["--seed", "0", "gradcheck", "--points", "2"]) == 0
    out = capsys.readouterr().out
    assert "total_loss" in out
    assert "FAIL" not in out


def test_sweep_tmax_command(tmp_path, capsys):
    args = ["--out-dir", str(tmp_path), "--seed", "3", "--workers", "2",
            "--set", "num_antennas=16", "--set", "num_ttds_per_chain=4",
            "--set", "num_subcarriers=2",
            "sweep-tmax", "--instances", "2", "--modes", "serial,parallel",
            "--tmax-ps", "40,80", "--max-iters", "15", "--restarts", "1"]
    assert main(args) == 0
    assert (tmp_path / "sweep_tmax.csv").exists()
    assert (tmp_path / "sweep_tmax_summary.csv").exists()
    with open(tmp_path / "sweep_tmax.csv") as fh:
        rows = list(csv.DictReader(fh))
    modes = {r["mode"] for r in rows}
    assert {"serial", "parallel", "full_digital", "ps_only",
            "serial_inf", "parallel_inf"} <= modes


def test_cdf_command(tmp_path):
    args = ["--out-dir", str(tmp_path), "--seed", "4",
            "--set", "num_antennas=8", "--set", "num_ttds_per_chain=2",
            "--set", "num_subcarriers=2",
            "cdf", "--instances", "3", "--modes", "serial",
            "--max-iters", "10", "--restarts", "1"]
    assert main(args) == 0
    with open(tmp_path / "cdf.csv") as fh:
        rows = list(csv.DictReader(fh))
    by_mode = {}
    for r in rows:
        by_mode.setdefault(r["mode"], []).append(float(r["cdf"]))
    for vals in by_mode.values():
        assert vals == sorted(vals)
        assert vals[-1] == 1.0


def test_mini_train_command(tmp_path, capsys):
    args = ["--out-dir", str(tmp_path), "--seed", "0",
            "mini-train", "--epochs", "2", "--instances", "6", "--antennas", "8"]
    assert main(args) == 0
    assert (tmp_path / "loss_curve.csv").exists()
    assert (tmp_path / "model.txt").exists()
    assert "permutations valid: True" in capsys.readouterr().out


def test_unknown_mode_rejected(tmp_path, capsys):
    code = main(["--out-dir", str(tmp_path), "sweep-tmax", "--modes", "bogus",
                 "--instances", "1"])
    assert code == 2
    assert "category=usage" in capsys.readouterr().err


def test_config_file_applies(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[system]\nnum_antennas = 8\nnum_ttds_per_chain = 2\n"
                   "num_subcarriers = 2\n[experiment]\ninstances = 2\n")
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path),
                 "generate"]) == 0
    params, _, _, records = read_dataset(tmp_path / "dataset.txt")
    assert params.num_antennas == 8
    assert len(records) == 2


def test_missing_config_file(capsys):
    assert main(["--config", "/no/file.ini", "count", "4", "2"]) == 3
    assert "category=config" in capsys.readouterr().err
