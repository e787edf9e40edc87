import numpy as np
import pytest

from src.thermoeit.errors import ConfigError, InvalidCoefficientError
from src.thermoeit.experiment import ExperimentConfig, locate_key
from src.thermoeit.expressions import ExpressionError

BASE = """seed = 3

[domain]
shape = "box"
lengths = [1.0, 1.0]
divisions = [8, 8]

[coefficients]
gamma = "1 + 0.5*x"
kappa = "2"
A = [["2", "0.5"], ["0.5", "1 + y"]]

[sources]
h = "x*y"
envelope = "pulse"
epsilon = 0.01
"""


def test_valid_config_round_trip():
    config = ExperimentConfig.from_toml(BASE)
    assert config.seed == 3
    assert config.domain.divisions == [8, 8]
    assert config.sources.build_envelope().describe()["kind"] == "pulse"
    assert config.identification_options().seed == 3

    mesh = config.domain.build_mesh()
    assert mesh.node_count == 81
    gamma = config.coefficients.gamma_field(mesh)
    assert np.allclose(gamma.values, 1 + 0.5 * mesh.nodes[:, 0])
    assert np.all(config.coefficients.kappa_field(mesh).values == 2.0)
    tensor = config.coefficients.tensor_field(mesh).values
    assert tensor.shape == (81, 2, 2)
    assert np.allclose(tensor[:, 1, 1], 1 + mesh.nodes[:, 1])
    assert np.allclose(tensor[:, 0, 1], 0.5)


def test_digest_is_stable_and_sensitive():
    first, second = ExperimentConfig.from_toml(BASE), ExperimentConfig.from_toml(BASE)
    assert first.digest == second.digest
    assert len(first.digest) == 64
    assert ExperimentConfig.from_toml(BASE.replace("seed = 3", "seed = 4")).digest != first.digest


def test_defaults_are_valid():
    config = ExperimentConfig().check()
    assert config.domain.dimension == 2
    assert config.halfspace.frequency_values() == pytest.approx([2 * np.pi, 4 * np.pi])


def test_negative_gamma_rejected_before_any_solve(mocker):
    build = mocker.patch("src.thermoeit.experiment.build_box_mesh")
    with pytest.raises(InvalidCoefficientError) as excinfo:
        ExperimentConfig.from_toml(BASE.replace('gamma = "1 + 0.5*x"', 'gamma = "-1"'))
    assert excinfo.value.line == 9
    assert excinfo.value.exit_code == 2
    build.assert_not_called()


def test_non_elliptic_tensor_rejected():
    text = BASE.replace('A = [["2", "0.5"], ["0.5", "1 + y"]]', 'A = [["1", "2"], ["2", "1"]]')
    with pytest.raises(InvalidCoefficientError) as excinfo:
        ExperimentConfig.from_toml(text)
    assert excinfo.value.line == 11


def test_expression_error_points_into_the_file():
    text = BASE.replace('kappa = "2"', 'kappa = "2 * q"')
    with pytest.raises(ExpressionError) as excinfo:
        ExperimentConfig.from_toml(text)
    assert excinfo.value.line == 10
    # `kappa = "` occupies nine columns, q is the fifth character of the expression
    assert excinfo.value.column == 14


def test_toml_syntax_error_has_line():
    with pytest.raises(ConfigError) as excinfo:
        ExperimentConfig.from_toml(BASE.replace('shape = "box"', 'shape = "box'))
    assert excinfo.value.line == 4


def test_schema_errors_have_key_line():
    with pytest.raises(ConfigError) as excinfo:
        ExperimentConfig.from_toml(BASE.replace("epsilon = 0.01", "epsilon = -0.01"))
    assert excinfo.value.line == 16
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(BASE + "\n[time]\nt_end = 0.1\ndt = 0.5\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(BASE + "\n[solver]\nunknown_key = 1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(BASE.replace("divisions = [8, 8]", "divisions = [8]"))


def test_disk_domain():
    text = BASE.replace('shape = "box"', 'shape = "disk"').replace("divisions = [8, 8]", "divisions = [8]")
    text = text.replace('"1 + y"', '"2 + y"')
    config = ExperimentConfig.from_toml(text)
    mesh = config.domain.build_mesh()
    assert mesh.shape == "disk"
    assert np.all(np.linalg.norm(config.domain.sample_points(), axis=1) <= 1.0 + 1e-12)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.toml")
    path = tmp_path / "experiment.toml"
    path.write_text(BASE)
    assert ExperimentConfig.load(path).seed == 3


def test_locate_key():
    assert locate_key(BASE, "coefficients", "kappa") == 10
    assert locate_key(BASE, None, "seed") == 1
    assert locate_key(BASE, "sources", "missing") == 13
    assert locate_key(None, "sources", "h") is None
