from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import linalg

from src.thermoeit.discretization import BoundaryTrace, ScalarField, TensorField, build_box_mesh, stiffness_matrix
from src.thermoeit.elliptic import ConductivitySolver, assemble_P, dirichlet_spectrum, dtn_map
from src.thermoeit.errors import (
    ConfigError,
    EquilibriumNotReachedError,
    IdentificationError,
    MultiplicityError,
    PencilRankError,
    RankDeficiencyError,
)
from src.thermoeit.experiment import ExperimentConfig
from src.thermoeit.heat_measurement import FluxTrace, HeatFlowDevice, SourceEnvelope, impulse_response
from src.thermoeit.protocol import IdentificationReport
from src.thermoeit.spectral_inverse import (
    DtnFormTable,
    IdentificationOptions,
    ScaledCluster,
    bulk_error,
    check_flux_independence,
    default_gamma_basis,
    extract_dtn_form,
    fit_dirichlet_series,
    fit_gamma_from_dtn,
    flux_independence_check,
    full_pipeline,
    harmonic_polynomial_probes,
    kappa_from_scaled_modes,
    match_eigenspaces,
    operator_consistency_check,
    polarized_form,
    quadratic_form,
    reconstruct,
    recover_kappa,
    series_coefficients,
    trace_independence,
)
from src.thermoeit.spectral_inverse import pipeline as pipeline_module
from src.thermoeit.spectral_inverse.dirichlet_series import _resolved_rank

RAMP = SourceEnvelope.ramp()


def sine_bump(points):
    return np.sin(np.pi * points[:, 0]) * np.sin(np.pi * points[:, 1])


@pytest.fixture(scope="module")
def coarse_device(coarse_square_mesh):
    mesh = coarse_square_mesh
    return HeatFlowDevice(ScalarField.constant(mesh, 1.0), ScalarField.constant(mesh, 1.0),
                          TensorField.identity(mesh), impulse_modes=20)


@pytest.fixture(scope="module")
def square_spectral(unit_square_mesh):
    mesh = unit_square_mesh
    operator = assemble_P(ScalarField.constant(mesh, 1.0), TensorField.identity(mesh))
    return dirichlet_spectrum(operator, 120)


@pytest.fixture(scope="module")
def bumpy_kappa_spectral():
    """Lowest hundred Dirichlet modes for κ = 1 + 0.3·bump on a 24² mesh."""
    mesh = build_box_mesh(2, [1.0, 1.0], [24, 24])
    kappa = ScalarField.from_function(mesh, lambda p: 1.0 + 0.3 * sine_bump(p))
    operator = assemble_P(kappa, TensorField.identity(mesh))
    return dirichlet_spectrum(operator, 100)


def ramp_measurement(device, t_end=2.5):
    return lambda h: device.sigma(h, RAMP, t_end, 0.01)


def test_quadratic_form_examples(coarse_device):
    mesh = coarse_device.mesh
    measure = ramp_measurement(coarse_device)
    x1 = BoundaryTrace.from_function(mesh, lambda p: p[:, 0])
    assert quadratic_form(measure, x1) == pytest.approx(1.0, abs=1e-3)
    assert abs(quadratic_form(measure, np.ones(mesh.boundary_nodes.size))) <= 1e-8

    h = BoundaryTrace.from_function(mesh, lambda p: p[:, 0] * p[:, 1])
    h_tilde = BoundaryTrace.from_function(mesh, lambda p: p[:, 1] ** 2)
    assert abs(polarized_form(measure, h, h_tilde) - polarized_form(measure, h_tilde, h)) <= 1e-8


def test_extract_dtn_form_matches_schur_complement(coarse_device):
    mesh = coarse_device.mesh
    probes = harmonic_polynomial_probes(mesh, 3)
    table = extract_dtn_form(ramp_measurement(coarse_device), probes, threads=2)
    expected = dtn_map(ScalarField.constant(mesh, 1.0)).gram(probes)
    assert table.gram.shape == (3, 3)
    assert np.allclose(table.gram, table.gram.T)
    assert np.allclose(table.gram, expected, atol=1e-5 * np.abs(expected).max())
    assert len(table.values) == 3 + 2 * 3


def test_equilibrium_not_reached_reports_decay(coarse_device):
    mesh = coarse_device.mesh
    x1 = BoundaryTrace.from_function(mesh, lambda p: p[:, 0])
    with pytest.raises(EquilibriumNotReachedError) as excinfo:
        quadratic_form(ramp_measurement(coarse_device, t_end=1.2), x1)
    assert np.isfinite(excinfo.value.decay_rate)


def test_extract_dtn_form_rejects_empty_probe_set(coarse_device):
    with pytest.raises(ConfigError):
        extract_dtn_form(ramp_measurement(coarse_device), [])


def exact_table(gamma, count):
    mesh = gamma.mesh
    probes = harmonic_polynomial_probes(mesh, count)
    block = np.stack([p.values for p in probes], axis=1)
    w = ConductivitySolver(gamma).solve(block)
    return DtnFormTable(mesh, block, w.T @ (stiffness_matrix(mesh, gamma.values) @ w))


def test_gamma_fit_constant(coarse_square_mesh):
    mesh = coarse_square_mesh
    table = exact_table(ScalarField.constant(mesh, 2.0), 3)
    fit = fit_gamma_from_dtn(table, basis=[np.ones(mesh.node_count)])
    assert fit.parameters[0] == pytest.approx(2.0, rel=1e-2)
    assert fit.misfit <= 1e-8


def test_gamma_fit_needs_no_iterations_at_truth(coarse_square_mesh):
    mesh = coarse_square_mesh
    table = exact_table(ScalarField.constant(mesh, 1.0), 3)
    fit = fit_gamma_from_dtn(table, basis=[np.ones(mesh.node_count)], initial=[1.0])
    assert fit.iterations == 0
    assert fit.parameters[0] == 1.0


def test_gamma_fit_rejects_too_many_parameters(coarse_square_mesh):
    mesh = coarse_square_mesh
    table = exact_table(ScalarField.constant(mesh, 1.0), 1)
    with pytest.raises(ConfigError):
        fit_gamma_from_dtn(table)


def test_gamma_fit_recovers_bump_from_finer_truth(fine_square_mesh):
    fine = build_box_mesh(2, [1.0, 1.0], [128, 128])
    truth = np.array([1.0, 0.3, 0.0, 0.0])
    gamma_fine = ScalarField(fine, np.stack(default_gamma_basis(fine)).T @ truth)
    measured = exact_table(gamma_fine, 5)

    mesh = fine_square_mesh
    probes = np.stack([p.values for p in harmonic_polynomial_probes(mesh, 5)], axis=1)
    table = DtnFormTable(mesh, probes, measured.gram)
    fit = fit_gamma_from_dtn(table, tolerance=1e-6)
    assert fit.parameters[0] == pytest.approx(1.0, rel=0.1)
    assert fit.parameters[1] == pytest.approx(0.3, rel=0.1)
    assert np.all(np.abs(fit.parameters[2:]) <= 0.03)


def synthetic_traces(mesh, times):
    g1 = np.ones(mesh.boundary_nodes.size)
    g2 = 1.0 + mesh.boundary_coordinates[:, 0]
    g1 /= np.sqrt(np.sum(mesh.boundary_mass * g1 ** 2))
    g2 /= np.sqrt(np.sum(mesh.boundary_mass * g2 ** 2))
    values = 2.0 * np.outer(np.exp(-3.0 * times), g1) + np.outer(np.exp(-10.0 * times), g2)
    return FluxTrace(mesh, times, values), g1, g2


def test_fit_two_exponentials(coarse_square_mesh):
    times = np.arange(1, 301) * 0.01
    trace, g1, g2 = synthetic_traces(coarse_square_mesh, times)
    fit = fit_dirichlet_series(trace, mode_budget=4, window=(0.01, 3.0))
    assert np.allclose(fit.exponents, [3.0, 10.0], rtol=1e-6)
    assert fit.multiplicities.tolist() == [1, 1]
    assert fit.coefficients[0][0, 0] == pytest.approx(2.0, rel=1e-6)
    assert fit.coefficients[1][0, 0] == pytest.approx(1.0, rel=1e-6)
    assert np.allclose(fit.amplitude_traces[0][0], g1, atol=1e-6)
    assert np.allclose(fit.amplitude_traces[1][0], g2, atol=1e-6)
    assert fit.residual <= 1e-6
    assert np.allclose(fit.predict(times)[0], trace.values, atol=1e-6 * np.abs(trace.values).max())


def test_fit_rejects_bad_sampling(coarse_square_mesh):
    mesh = coarse_square_mesh
    times = np.array([0.01, 0.02, 0.04, 0.05, 0.06])
    trace = FluxTrace(mesh, times, np.ones((5, mesh.boundary_nodes.size)))
    with pytest.raises(ConfigError):
        fit_dirichlet_series(trace, 3, window=(0.01, 0.06))
    zero = FluxTrace(mesh, np.arange(1, 11) * 0.01, np.zeros((10, mesh.boundary_nodes.size)))
    with pytest.raises(PencilRankError):
        fit_dirichlet_series(zero, 3, window=(0.01, 0.1))


def tilted_pair(mesh, times, tilt):
    """Two probes sharing e^{−3t}; the second flux differs by ``tilt`` (x − ½) from the first."""
    g = np.full(mesh.boundary_nodes.size, 0.5)
    decay = np.exp(-3.0 * times)
    return [FluxTrace(mesh, times, np.outer(decay, g)),
            FluxTrace(mesh, times, np.outer(decay, g + tilt * (mesh.boundary_coordinates[:, 0] - 0.5)))]


def test_fit_measures_independence_before_truncation(coarse_square_mesh):
    times = np.arange(1, 301) * 0.01
    nearly_dependent = fit_dirichlet_series(tilted_pair(coarse_square_mesh, times, 1e-3), 4, window=(0.01, 3.0))
    assert nearly_dependent.multiplicities.tolist() == [2]
    assert 1e-5 < nearly_dependent.conditioning[0] < 1e-3
    assert nearly_dependent.noise_floors[0] < nearly_dependent.conditioning[0]
    with pytest.raises(RankDeficiencyError):
        check_flux_independence(nearly_dependent, 1e-3)

    independent = fit_dirichlet_series(tilted_pair(coarse_square_mesh, times, 1.0), 4, window=(0.01, 3.0))
    assert independent.conditioning[0] == pytest.approx(np.sqrt(1 / 3), rel=5e-2)
    assert check_flux_independence(independent, 1e-3) == independent.conditioning.tolist()


@pytest.mark.parametrize("values, floor, expected", [
    ([1.0, 0.5, 1e-9], 1e-6, 2),
    ([1.0, 0.5, 0.3], 0.4, 0),
    ([1.0, 0.1, 0.01], 0.05, 2),
    ([1.0], 1e-6, 1),
    ([1.0, 0.5], 2.0, 0),
])
def test_resolved_rank_needs_a_gap(values, floor, expected):
    assert _resolved_rank(np.array(values), floor) == expected



@pytest.fixture(scope="module")
def series_case(square_spectral, rng_module):
    """Exact impulse traces of the seven lowest clusters for four generic sources."""
    spectral = square_spectral.truncated(int(square_spectral.clusters[6][-1]) + 1)
    times = np.arange(1, 251) * 2e-3
    sources = rng_module.standard_normal((4, spectral.mesh.node_count))
    traces = [impulse_response(spectral, source, times) for source in sources]
    return spectral, traces


@pytest.fixture(scope="module")
def rng_module():
    return np.random.default_rng(7)


def test_fit_inverts_impulse_response(series_case):
    spectral, traces = series_case
    fit = fit_dirichlet_series(traces, mode_budget=20, window=(2e-3, 0.5))
    assert np.allclose(fit.exponents, spectral.cluster_values, rtol=1e-6)
    assert fit.multiplicities.tolist() == spectral.multiplicities
    assert fit.exponents[0] == pytest.approx(2 * np.pi ** 2, rel=1e-2)
    assert fit.exponents[1] == pytest.approx(5 * np.pi ** 2, rel=1e-2)
    assert fit.multiplicities[1] == 2


def test_fit_structure_is_invariant_under_amplitude_scaling(series_case):
    _, traces = series_case
    fit = fit_dirichlet_series(traces, mode_budget=20, window=(2e-3, 0.5))
    scaled = fit_dirichlet_series([trace.scaled(7.5) for trace in traces], mode_budget=20, window=(2e-3, 0.5))
    assert np.allclose(scaled.exponents, fit.exponents, rtol=1e-8)
    assert scaled.multiplicities.tolist() == fit.multiplicities.tolist()
    assert np.allclose(scaled.amplitude_matrix(0), 7.5 * fit.amplitude_matrix(0),
                       atol=1e-6 * np.abs(scaled.amplitude_matrix(0)).max())


def test_fit_of_device_impulse_probe(unit_square_mesh):
    mesh = unit_square_mesh
    device = HeatFlowDevice(ScalarField.constant(mesh, 1.0), ScalarField.constant(mesh, 1.0),
                            TensorField.identity(mesh), impulse_modes=60)
    h = BoundaryTrace.from_function(mesh, lambda p: np.exp(p[:, 0]) * np.cos(p[:, 1]))
    trace = device.sigma(h, SourceEnvelope.impulse(), 0.5, 2e-3)
    fit = fit_dirichlet_series(trace, mode_budget=20)
    assert fit.exponents[0] == pytest.approx(2 * np.pi ** 2, rel=1e-2)
    assert fit.window[0] > 0


def test_flux_independence(square_spectral, unit_disk_mesh):
    spectral = square_spectral
    first_ten = {int(spectral.labels[k]) for k in range(10)}
    for cluster in first_ten:
        assert flux_independence_check(spectral, cluster) > 1e-3
    assert flux_independence_check(spectral, 1) >= 0.1
    disk = dirichlet_spectrum(assemble_P(ScalarField.constant(unit_disk_mesh, 1.0),
                                         TensorField.identity(unit_disk_mesh)), 10)
    for cluster in {int(label) for label in disk.labels[:10]}:
        assert flux_independence_check(disk, cluster) > 1e-3


def test_flux_independence_negative_control(square_spectral):
    trace = square_spectral.flux_traces[:, 0]
    assert trace_independence(square_spectral.mesh, np.stack([trace, trace])) <= 1e-12
    with pytest.raises(ConfigError):
        flux_independence_check(square_spectral, 10_000)


def random_factors(rng, m=3):
    return rng.standard_normal((20, m)), rng.standard_normal((15, m))


def test_match_identical_factorizations(rng):
    inner, boundary = random_factors(rng)
    match = match_eigenspaces((inner, boundary), (inner, boundary), 3)
    assert np.allclose(match.transform, np.eye(3), atol=1e-10)
    assert match.orthogonality_defect <= 1e-10
    assert match.boundary_points.size == 3


def test_match_recovers_rotations():
    rng = np.random.default_rng(1234)
    for _ in range(100):
        inner, boundary = random_factors(rng)
        rotation = linalg.qr(rng.standard_normal((3, 3)))[0]
        match = match_eigenspaces((inner, boundary), (inner @ rotation, boundary @ rotation), 3)
        assert np.linalg.norm(match.transform - rotation) <= 1e-8
        assert match.orthogonality_defect <= 1e-8
        assert match.interior_defect <= 1e-10
        assert match.boundary_defect <= 1e-10


def test_match_rejects_dependent_samples():
    rng = np.random.default_rng(99)
    for _ in range(100):
        inner, boundary = random_factors(rng)
        dependent = boundary.copy()
        dependent[:, 2] = dependent[:, 0] - 0.5 * dependent[:, 1]
        with pytest.raises(RankDeficiencyError):
            match_eigenspaces((inner, dependent), (inner, boundary), 3)
    with pytest.raises(ConfigError):
        match_eigenspaces((inner, boundary), (inner[:, :2], boundary[:, :2]), 3)


def test_first_series_coefficient(square_spectral):
    assert series_coefficients(square_spectral)[0] == pytest.approx(8 / np.pi ** 2, rel=1e-2)


def test_recover_kappa_reports_truncation_tail(square_spectral):
    estimate = recover_kappa(square_spectral, 100)
    assert estimate.tail > 1e-3
    assert estimate.suggested_count > 100
    with pytest.raises(ConfigError):
        recover_kappa(square_spectral, 0)
    with pytest.raises(ConfigError):
        recover_kappa(square_spectral, 10, estimator="median")


def test_ratio_estimator_is_exact_for_constant_kappa(coarse_square_mesh):
    mesh = coarse_square_mesh
    operator = assemble_P(ScalarField.constant(mesh, 2.0), TensorField.identity(mesh))
    spectral = dirichlet_spectrum(operator, 12)
    estimate = recover_kappa(spectral, estimator="ratio")
    assert np.allclose(estimate.field.values, 2.0, rtol=1e-8)


def test_series_estimator_on_complete_basis(unit_square_mesh):
    mesh = unit_square_mesh
    operator = assemble_P(ScalarField.constant(mesh, 2.0), TensorField.identity(mesh))
    spectral = dirichlet_spectrum(operator, mesh.interior_node_count)
    estimate = recover_kappa(spectral)
    assert bulk_error(estimate.field, ScalarField.constant(mesh, 2.0)) <= 0.02


def test_ratio_estimator_for_smooth_kappa(bumpy_kappa_spectral):
    spectral = bumpy_kappa_spectral
    estimate = recover_kappa(spectral, estimator="ratio")
    assert bulk_error(estimate.field, spectral.operator.kappa) <= 0.05


def scaled_clusters(spectral, rng, count):
    clusters = []
    for members in spectral.clusters[:count]:
        m = members.size
        mixing = np.eye(m) + 0.3 * rng.standard_normal((m, m))
        psi = spectral.eigenvectors[:, members] @ linalg.inv(mixing)
        traces = mixing @ spectral.flux_traces[:, members].T
        clusters.append(ScaledCluster(float(spectral.eigenvalues[members].mean()), psi, traces))
    return clusters


def test_kappa_from_scaled_modes_constant(coarse_square_mesh, rng):
    mesh = coarse_square_mesh
    operator = assemble_P(ScalarField.constant(mesh, 2.0), TensorField.identity(mesh))
    spectral = dirichlet_spectrum(operator, 12)
    clusters = scaled_clusters(spectral, rng, len(spectral.clusters))
    absolute = kappa_from_scaled_modes(mesh, clusters)
    assert np.allclose(absolute.field.values, 2.0, rtol=1e-6)
    gauged = kappa_from_scaled_modes(mesh, clusters, kappa_mean=1.0)
    assert np.allclose(gauged.field.values, 1.0, rtol=1e-6)
    with pytest.raises(IdentificationError):
        kappa_from_scaled_modes(mesh, [])


def test_kappa_from_scaled_modes_smooth(bumpy_kappa_spectral, rng):
    spectral = bumpy_kappa_spectral
    clusters = scaled_clusters(spectral, rng, len(spectral.clusters))
    estimate = kappa_from_scaled_modes(spectral.mesh, clusters)
    assert bulk_error(estimate.field, spectral.operator.kappa) <= 0.05


def test_operator_consistency(coarse_square_mesh):
    mesh = coarse_square_mesh
    one = assemble_P(ScalarField.constant(mesh, 1.0), TensorField.identity(mesh))
    same = assemble_P(ScalarField.constant(mesh, 1.0), TensorField.identity(mesh))
    double = assemble_P(ScalarField.constant(mesh, 2.0), TensorField.identity(mesh))
    tilted = assemble_P(ScalarField.constant(mesh, 1.0), TensorField.constant(mesh, np.diag([1.05, 1.0])))
    assert operator_consistency_check(one, same) <= 1e-12
    assert operator_consistency_check(one, double) == pytest.approx(1.0, rel=1e-10)
    assert 0 < operator_consistency_check(one, tilted) < 0.1
    other = build_box_mesh(2, [1.0, 1.0], [6, 6])
    with pytest.raises(ConfigError):
        operator_consistency_check(one, assemble_P(ScalarField.constant(other, 1.0), TensorField.identity(other)))


PIPELINE_OPTIONS = dict(impulse_pairs=16, mode_budget=30, basis_count=10, fit_window=(0.03, 0.4))


def unit_device(mesh, kappa=1.0):
    return HeatFlowDevice(ScalarField.constant(mesh, 1.0), ScalarField.constant(mesh, kappa),
                          TensorField.identity(mesh), impulse_modes=80)


@pytest.fixture(scope="module")
def unit_result(unit_square_mesh):
    return full_pipeline(unit_device(unit_square_mesh), IdentificationOptions(**PIPELINE_OPTIONS), threads=2)


def test_pipeline_recovers_unit_truth(unit_result, square_spectral):
    result = unit_result
    assert result.succeeded
    assert result.series.cluster_count >= 5
    assert np.allclose(result.series.exponents[:5], square_spectral.cluster_values[:5], rtol=1e-2)
    assert result.series.multiplicities[:5].tolist() == square_spectral.multiplicities[:5]
    assert np.all(np.abs(result.gamma.gamma.values - 1.0) <= 1e-2)
    assert bulk_error(result.kappa.field, ScalarField.constant(result.mesh, 1.0)) <= 0.02
    assert len(result.flux_independence) == result.series.cluster_count
    assert all(value >= 1e-3 for value in result.flux_independence)

    report = result.to_json()
    assert report["eigenvalues"][0] == pytest.approx(2 * np.pi ** 2, rel=1e-2)
    assert report["failures"] == []
    assert len(report["dtn_gram"]) == 3


def test_pipeline_spectrum_scales_with_kappa(unit_square_mesh, unit_result):
    options = IdentificationOptions(**{**PIPELINE_OPTIONS, "fit_window": (0.015, 0.2)}, impulse_t_end=0.2,
                                    kappa_mean=None)
    doubled = full_pipeline(unit_device(unit_square_mesh, kappa=2.0), options)
    assert doubled.succeeded
    ratio = doubled.series.exponents[0] / unit_result.series.exponents[0]
    assert ratio == pytest.approx(2.0, rel=1e-2)
    assert bulk_error(doubled.kappa.field, ScalarField.constant(unit_square_mesh, 2.0)) <= 0.02


def test_pipeline_source_mode_skips_conductivity(unit_square_mesh):
    options = IdentificationOptions(**PIPELINE_OPTIONS, mode="xi")
    result = full_pipeline(unit_device(unit_square_mesh), options)
    assert result.succeeded
    assert result.gamma is None and result.dtn is None
    assert result.series.exponents[0] == pytest.approx(2 * np.pi ** 2, rel=1e-2)
    assert bulk_error(result.kappa.field, ScalarField.constant(unit_square_mesh, 1.0)) <= 0.02


def test_pipeline_labels_stage_failures(coarse_device, mocker):
    options = IdentificationOptions(mode="xi", impulse_pairs=4, impulse_t_end=0.2, impulse_dt=0.01)
    measurements = pipeline_module.measure(coarse_device, options)
    mocker.patch.object(pipeline_module, "fit_dirichlet_series",
                        side_effect=PencilRankError("pencil rank collapsed", [1.0, 0.0]))
    result = reconstruct(measurements)
    assert not result.succeeded
    assert [(f.stage, f.code, f.exit_code) for f in result.failures] == [("dirichlet_series", "pencil_rank", 4)]
    assert result.kappa is None
    with pytest.raises(IdentificationError):
        result.raise_for_failures()


def test_pipeline_labels_ambiguous_multiplicity(coarse_device, mocker):
    options = IdentificationOptions(mode="xi", impulse_pairs=4, impulse_t_end=0.2, impulse_dt=0.01)
    measurements = pipeline_module.measure(coarse_device, options)
    mocker.patch.object(pipeline_module, "fit_dirichlet_series",
                        side_effect=MultiplicityError("no gap", [1.0, 0.9, 0.8]))
    result = reconstruct(measurements)
    assert [(f.stage, f.code, f.exit_code) for f in result.failures] == [
        ("dirichlet_series", "ambiguous_multiplicity", 4)]


def test_pipeline_stops_on_nearly_dependent_fluxes(coarse_device, coarse_square_mesh):
    options = IdentificationOptions(mode="xi", impulse_pairs=4, impulse_t_end=0.2, impulse_dt=0.01)
    measurements = pipeline_module.measure(coarse_device, options)
    times = np.arange(1, 301) * 0.01
    traces = tilted_pair(coarse_square_mesh, times, 1e-3)
    dependent = replace(measurements, times=times, traces=np.stack([trace.values for trace in traces]))
    result = reconstruct(dependent, options.model_copy(update={"mode_budget": 4, "fit_window": (0.01, 3.0)}))

    assert [(f.stage, f.code, f.exit_code) for f in result.failures] == [("flux_independence", "rank_deficiency", 4)]
    assert result.series.multiplicities.tolist() == [2]
    assert result.flux_independence[0] < 1e-3
    assert result.clusters == [] and result.kappa is None
    assert IdentificationReport.from_result(result, "ab" * 32).stage == "dirichlet_series"


@pytest.mark.slow
def test_pipeline_recovers_conductivity_bump():
    config = ExperimentConfig.load(Path(__file__).parents[3] / "configs" / "unit_square.toml")
    mesh = config.domain.build_mesh()
    gamma = config.coefficients.gamma_field(mesh)
    kappa = config.coefficients.kappa_field(mesh)
    tensor = config.coefficients.tensor_field(mesh)
    device = HeatFlowDevice(gamma, kappa, tensor, impulse_modes=config.solver.impulse_modes)
    result = full_pipeline(device, config.identification_options(), threads=2)

    assert result.succeeded
    expected = dirichlet_spectrum(assemble_P(kappa, tensor), 4).cluster_values[0]
    assert result.series.exponents[0] == pytest.approx(expected, rel=1e-2)
    assert np.max(np.abs(result.gamma.gamma.values - gamma.values) / gamma.values) <= 0.1
    assert bulk_error(result.kappa.field, kappa) <= 0.05


def test_probe_plan_is_deterministic(unit_square_mesh):
    options = IdentificationOptions(seed=5, impulse_pairs=3)
    first = pipeline_module.ProbePlan.build(unit_square_mesh, options)
    second = pipeline_module.ProbePlan.build(unit_square_mesh, options)
    assert first == second
    for real, imag in zip(first.zeta_real, first.zeta_imag):
        zeta = np.asarray(real) + 1j * np.asarray(imag)
        assert abs(zeta @ zeta) <= 1e-12
