import json

import numpy as np
import pytest
from typer.testing import CliRunner

from src.thermoeit import cli
from src.thermoeit._config import SettingsManager
from src.thermoeit.errors import EigenSolverError

runner = CliRunner()

SMALL = """[domain]
lengths = [1.0, 1.0]
divisions = [12, 12]

[coefficients]
gamma = "1"
kappa = "1"

[solver]
eigen_count = 6
"""

PIPELINE = """[domain]
lengths = [1.0, 1.0]
divisions = [32, 32]

[solver]
impulse_modes = 80

[identification]
mode = "xi"
impulse_pairs = 16
mode_budget = 30
basis_count = 10
fit_window = [0.03, 0.4]
"""


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("THERMOEIT_OUTPUT_ROOT", str(tmp_path / "runs"))
    SettingsManager.reset()
    yield
    SettingsManager.reset()


def write_config(tmp_path, text, name="experiment.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_spectrum_writes_stamped_artifacts(tmp_path):
    out = tmp_path / "spectrum"
    result = runner.invoke(cli.app, ["spectrum", "--config", write_config(tmp_path, SMALL), "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "spectrum.json").read_text())
    assert len(payload["config_digest"]) == 64
    assert (out / "spectrum.csv").read_text().splitlines()[0] == "index,eigenvalue,cluster,multiplicity"
    assert payload["multiplicities"][:2] == [1, 2]


def test_default_output_root_from_environment(tmp_path):
    result = runner.invoke(cli.app, ["spectrum", "--config", write_config(tmp_path, SMALL)])
    assert result.exit_code == 0, result.output
    runs = list((tmp_path / "runs").iterdir())
    assert len(runs) == 1 and runs[0].name.startswith("spectrum-")


def test_repeated_runs_are_byte_identical(tmp_path):
    config = write_config(tmp_path, SMALL)
    for out in ("first", "second"):
        assert runner.invoke(cli.app, ["spectrum", "--config", config, "--out", str(tmp_path / out)]).exit_code == 0
    for name in ("spectrum.csv", "spectrum.json"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_config_errors_exit_2(tmp_path):
    config = write_config(tmp_path, SMALL.replace('gamma = "1"', 'gamma = "-1"'))
    assert runner.invoke(cli.app, ["forward", "--config", config]).exit_code == 2
    assert runner.invoke(cli.app, ["spectrum", "--config", str(tmp_path / "missing.toml")]).exit_code == 2
    assert runner.invoke(cli.app, ["measure", "--mode", "psi"]).exit_code == 2


def test_solver_and_unexpected_errors(tmp_path, mocker):
    config = write_config(tmp_path, SMALL)
    mocker.patch.object(cli, "run_spectrum", side_effect=EigenSolverError("eigsh did not converge"))
    assert runner.invoke(cli.app, ["spectrum", "--config", config]).exit_code == 3
    mocker.patch.object(cli, "run_spectrum", side_effect=RuntimeError("boom"))
    assert runner.invoke(cli.app, ["spectrum", "--config", config]).exit_code == 1


def test_verify_exit_codes(tmp_path, mocker):
    config = write_config(tmp_path, SMALL)
    mocker.patch("src.thermoeit.verification.CHECKS", [("trivial", lambda c: (0.0, 1.0, {}))])
    out = tmp_path / "verify"
    assert runner.invoke(cli.app, ["verify", "--config", config, "--out", str(out)]).exit_code == 0
    report = json.loads((out / "verify_report.json").read_text())
    assert report["passed"] is True and report["checks"][0]["name"] == "trivial"

    mocker.patch("src.thermoeit.verification.CHECKS", [("broken", lambda c: (2.0, 1.0, {}))])
    assert runner.invoke(cli.app, ["verify", "--config", config, "--out", str(out)]).exit_code == 4
    assert json.loads((out / "verify_report.json").read_text())["passed"] is False


def test_forward_dumps_fields_and_flux(tmp_path):
    text = SMALL + '\n[sources]\nh = "x"\nenvelope = "ramp"\n\n[time]\nt_end = 0.5\ndt = 0.05\n'
    out = tmp_path / "forward"
    assert runner.invoke(cli.app, ["forward", "--config", write_config(tmp_path, text), "--out", str(out)]).exit_code == 0
    summary = json.loads((out / "forward.json").read_text())
    assert summary["nodes"] == 169
    assert len(summary["total_flux"]) == 11
    header = (out / "fields.csv").read_text().splitlines()[0]
    assert header == "node,x,y,gamma,kappa,w,power_density,psi_final"


def test_reconstruct_rejects_non_measurement_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    assert runner.invoke(cli.app, ["reconstruct", str(tmp_path / "empty")]).exit_code == 2


@pytest.mark.slow
def test_measure_then_reconstruct_without_truth(tmp_path):
    config = write_config(tmp_path, PIPELINE)
    out = tmp_path / "run"
    result = runner.invoke(cli.app, ["measure", "--config", config, "--out", str(out), "--threads", "2"])
    assert result.exit_code == 0, result.output
    assert (out / "truth" / "kappa.npy").exists()
    for path in (out / "truth").iterdir():
        path.unlink()
    (out / "truth").rmdir()

    result = runner.invoke(cli.app, ["reconstruct", str(out / "measurements"), "--out", str(tmp_path / "rec")])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "rec" / "report.json").read_text())
    assert report["stage"] == "complete"
    assert report["mode"] == "xi"
    assert report["eigenvalues"][0] == pytest.approx(2 * np.pi ** 2, rel=1e-2)
    assert report["config_digest"] == json.loads((out / "measurements" / "measure.json").read_text())["config_digest"]
    kappa = np.load(tmp_path / "rec" / report["kappa_field_path"])
    assert kappa.shape == (33 * 33,)


def test_patch_record_tags_service():
    class Level:
        name = "INFO"

    record = {"extra": {}, "level": Level()}
    assert cli.patch_record(record) is True
    assert record["extra"]["service"] == "thermoeit"
    assert record["extra"]["level"] == "INFO"
