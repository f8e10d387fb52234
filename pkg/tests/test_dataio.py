import numpy as np
import pytest

from ttdbeam import dataio
from ttdbeam.beamformer import ConfigMode
from ttdbeam.dataio import (DatasetRecord, FormatError, read_beamformer,
                            read_dataset, read_model, split_tag, write_beamformer,
                            write_dataset, write_model)
from ttdbeam.experiments import make_record
from ttdbeam.params import ArrayGeometry, SystemParams


def desk(**over):
    return SystemParams.desk_scale(num_antennas=16, num_ttds_per_chain=4, **over)


def test_split_tags_exact_quantiles():
    tags = [split_tag(i, 1000) for i in range(1000)]
    assert tags.count("train") == 600
    assert tags.count("test") == 200
    assert tags.count("validation") == 200
    assert tags[:600] == ["train"] * 600


def test_dataset_round_trip_bit_exact(tmp_path):
    params = desk()
    geom = ArrayGeometry.ula(params)
    records = [make_record(params, geom, seed=7, index=i, count=4)
               for i in range(4)]
    path = tmp_path / "ds.txt"
    write_dataset(path, params, geom, 7, records)
    params2, geom2, seed2, records2 = read_dataset(path)
    assert params2 == params
    assert geom2 == geom
    assert seed2 == 7
    for a, b in zip(records, records2):
        assert a.index == b.index and a.split == b.split
        assert np.array_equal(a.instance.responses, b.instance.responses)
        assert a.instance.scenario == b.instance.scenario
    # writing again must produce identical bytes
    path2 = tmp_path / "ds2.txt"
    write_dataset(path2, params2, geom2, seed2, records2)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_rejects_wrong_magic(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("something else\n")
    with pytest.raises(FormatError):
        read_dataset(p)


def test_beamformer_round_trip(tmp_path):
    params = desk()
    from ttdbeam.objective import realize
    from ttdbeam.optimize import random_initialization
    geom = ArrayGeometry.ula(params)
    H = make_record(params, geom, seed=1, index=0, count=1).instance
    for mode in (ConfigMode.SERIAL_FIXED, ConfigMode.ADAPTIVE, ConfigMode.PARALLEL,
                 ConfigMode.PS_ONLY):
        theta = random_initialization(H, mode, np.random.default_rng(3))
        bf = realize(theta, params)
        path = tmp_path / f"bf_{mode.value}.txt"
        write_beamformer(path, bf)
        bf2 = read_beamformer(path)
        assert np.array_equal(bf2.ps.phases, bf.ps.phases)
        assert np.array_equal(bf2.delays.incremental_delays,
                              bf.delays.incremental_delays)
        assert np.array_equal(bf2.switches.perms, bf.switches.perms)
        assert np.array_equal(bf2.digital.weights, bf.digital.weights)
        assert bf2.config_mode is bf.config_mode
        assert bf2.unbounded_delays == bf.unbounded_delays


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    weights = {"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=5),
               "scalarish": np.array(2.5)}
    path = tmp_path / "model.txt"
    write_model(path, weights)
    back = read_model(path)
    assert set(back) == set(weights)
    for k in weights:
        assert np.array_equal(back[k], weights[k])


def test_results_and_trace_csv(tmp_path):
    from ttdbeam.experiments import ResultRow
    rows = [ResultRow(0, "serial", 80.0, 17.25, 1e-12, 0.5),
            ResultRow(1, "parallel", 80.0, 16.5, 0.0, 0.4)]
    path = tmp_path / "rows.csv"
    dataio.write_results_csv(path, rows)
    text = path.read_text().splitlines()
    assert text[0] == "instance_id,mode,sweep_value,spectral_efficiency,residual_max,wall_time_s"
    assert len(text) == 3

    trace = np.array([[1.0, 0.0, 0.0, 0.0, 1.0], [0.5, 0.0, 0.0, 0.0, 0.5]])
    tpath = tmp_path / "trace.csv"
    dataio.write_trace_csv(tpath, trace)
    lines = tpath.read_text().splitlines()
    assert lines[0] == "iteration,l_eff,l_ps,l_ttd,l_pc,total"
    assert lines[1].startswith("0,")


def test_cdf_csv_nondecreasing(tmp_path):
    table = {"serial": np.array([3.0, 1.0, 2.0])}
    path = tmp_path / "cdf.csv"
    dataio.write_cdf_csv(path, table)
    lines = path.read_text().splitlines()[1:]
    ses = [float(l.split(",")[1]) for l in lines]
    cdfs = [float(l.split(",")[2]) for l in lines]
    assert ses == sorted(ses)
    assert cdfs == sorted(cdfs)
    assert cdfs[-1] == 1.0


def test_config_load_and_overrides(tmp_path):
    cfg = tmp_path / "conf.ini"
    cfg.write_text("""
[system]
num_antennas = 32
carrier_frequency_hz = 30e9

[experiment]
geometry = uca
instances = 5
""")
    sections = dataio.load_config(cfg)
    params = dataio.apply_system_overrides(SystemParams.desk_scale(),
                                           sections["system"])
    assert params.num_antennas == 32
    assert params.carrier_frequency_hz == 30e9
    assert sections["experiment"]["geometry"] == "uca"


def test_config_unknown_key_rejected():
    with pytest.raises(FormatError):
        dataio.apply_system_overrides(SystemParams.desk_scale(),
                                      {"nonsense_field": "1"})


def test_config_missing_file():
    with pytest.raises(FormatError):
        dataio.load_config("/no/such/file.ini")
    assert dataio.load_config(None) == {}
