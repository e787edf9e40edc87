import json

import pytest

from src.thermoeit.errors import EigenSolverError
from src.thermoeit.experiment import ExperimentConfig
from src.thermoeit.storage import ArtifactStore
from src.thermoeit.verification import (
    CHECKS,
    check_boundary_tensor,
    check_eigenspace_rotation,
    check_self_adjointness,
    run_checks,
    write_report,
)


@pytest.fixture
def config():
    return ExperimentConfig.from_toml('[coefficients]\ngamma = "1 + x"\nkappa = "1 + 0.5*y"\n'
                                      'A = [["2", "0.5"], ["0.5", "1"]]\n')


@pytest.mark.parametrize("check", [check_self_adjointness, check_eigenspace_rotation, check_boundary_tensor])
def test_fast_checks_pass(config, check):
    value, threshold, _ = check(config)
    assert value <= threshold


def test_failures_are_recorded_not_raised(config):
    def unstable(config):
        raise EigenSolverError("eigsh did not converge")

    results = run_checks(config, [("unstable", unstable), ("loose", lambda c: (0.5, 0.1, {"note": 1}))])
    assert [r.passed for r in results] == [False, False]
    assert results[0].detail == {"code": "eigensolver"} and "eigsh" in results[0].error
    assert results[1].value == 0.5 and results[1].detail == {"note": 1}


def test_report_lists_every_check(config, tmp_path):
    results = run_checks(config, [("ok", lambda c: (0.0, 1.0, {}))])
    store = ArtifactStore(tmp_path / "verify")
    name = write_report(config, store, results)
    report = json.loads(store.path(name).read_text())
    assert report == {"config_digest": config.digest, "passed": True,
                      "checks": [{"name": "ok", "passed": True, "value": 0.0, "threshold": 1.0,
                                  "detail": {}, "error": ""}]}


def test_check_names_are_unique():
    names = [name for name, _ in CHECKS]
    assert len(names) == len(set(names)) == 8
