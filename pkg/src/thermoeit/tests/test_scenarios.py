import csv

import numpy as np
import pytest

from src.thermoeit.experiment import ExperimentConfig
from src.thermoeit.scenarios import run_cgo_sweep, run_halfspace, run_spectrum
from src.thermoeit.storage import ArtifactStore


@pytest.fixture
def store(tmp_path):
    return ArtifactStore(tmp_path / "out")


def read_rows(path):
    with open(path, newline="") as file:
        return list(csv.reader(file))


def test_spectrum_scenario_scales_with_kappa(store, tmp_path):
    base = ExperimentConfig.from_toml('[domain]\ndivisions = [12, 12]\n\n[solver]\neigen_count = 5\n')
    doubled = ExperimentConfig.from_toml('[domain]\ndivisions = [12, 12]\n\n[coefficients]\nkappa = "2"\n\n'
                                         '[solver]\neigen_count = 5\n')
    one = run_spectrum(base, store)
    two = run_spectrum(doubled, ArtifactStore(tmp_path / "doubled"))
    assert two.summary["lowest"] == pytest.approx(2 * one.summary["lowest"], rel=1e-10)

    rows = read_rows(store.path("spectrum.csv"))
    assert rows[0] == ["index", "eigenvalue", "cluster", "multiplicity"]
    assert [int(r[3]) for r in rows[1:4]] == [1, 2, 2]
    assert store.read_json("spectrum")["config_digest"] == base.digest


def test_halfspace_scenario_recovers_off_diagonal_tensor(store):
    config = ExperimentConfig.from_toml('[coefficients]\nA = [["2", "1"], ["1", "1"]]\n')
    outcome = run_halfspace(config, store, threads=2)
    estimate = store.read_json("boundary_tensor")
    assert np.abs(np.array(estimate["A_hat"]) - [[2.0, 1.0], [1.0, 1.0]]).max() <= 0.1
    probes = store.read_json("probes")["probes"]
    for probe in probes:
        assert probe["decay_rate"] == pytest.approx(probe["predicted_decay_rate"], rel=0.05)
    assert len(read_rows(store.path("decay.csv"))) == 1 + 2 * 5
    assert outcome.summary["residual"] == estimate["residual"]


def test_cgo_sweep_scenario_writes_rows_and_rank(store):
    config = ExperimentConfig.from_toml('[cgo]\ngamma = "2"\nmagnitudes = [20.0, 40.0]\ngrid = 12\n'
                                        'probe_count = 6\nbasis_dim = 4\n')
    run_cgo_sweep(config, store, threads=2)
    rows = read_rows(store.path("cgo_sweep.csv"))
    assert rows[0] == ["rho_norm", "remainder_norm", "residual", "conductivity_residual", "iterations"]
    assert len(rows) == 3
    assert all(float(row[1]) <= 1e-12 for row in rows[1:])
    assert store.read_json("density")["basis_dim"] == 4
