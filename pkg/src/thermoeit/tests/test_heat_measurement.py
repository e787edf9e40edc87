import numpy as np
import pytest
from scipy.integrate import quad

from src.thermoeit.discretization import BoundaryTrace, ScalarField, TensorField, integrate
from src.thermoeit.elliptic import ConductivitySolver, assemble_P, dirichlet_spectrum, dtn_map
from src.thermoeit.errors import ConfigError
from src.thermoeit.heat_measurement import (
    FluxTrace,
    HeatFlowDevice,
    HeatSource,
    SourceEnvelope,
    duhamel_solution,
    evolve_heat,
    impulse_response,
    joule_source,
    pulse_moment,
    sigma_map,
    spectral_flux,
    xi_map,
)

CONSTANT = SourceEnvelope.custom(lambda t: np.ones_like(np.asarray(t, dtype=float)))


@pytest.fixture(scope="module")
def coarse_model(coarse_square_mesh):
    """Unit coefficients on a coarse mesh with the complete discrete spectrum."""
    mesh = coarse_square_mesh
    operator = assemble_P(ScalarField.constant(mesh, 1.0), TensorField.identity(mesh))
    return operator, dirichlet_spectrum(operator, mesh.interior_node_count)


def weighted_norm(operator, u):
    return np.sqrt(operator.inner(u, u))


def test_ramp_envelope():
    ramp = SourceEnvelope.ramp()
    t = np.linspace(0, 2, 401)
    values = ramp(t)
    assert np.all((values >= 0) & (values <= 1))
    assert np.all(values[t < 0.5] == 0)
    assert np.all(values[t > 1] == 1)


@pytest.mark.parametrize("epsilon", [1e-3, 0.1])
def test_pulse_envelope(epsilon):
    pulse = SourceEnvelope.pulse(epsilon)
    energy, _ = quad(lambda t: float(pulse.squared(t)), 0, epsilon, epsabs=1e-14, limit=200)
    assert energy == pytest.approx(1.0, abs=1e-10)
    assert pulse(np.array([-1e-9, epsilon * 1.0001, 2 * epsilon])).max() == 0


def test_pulse_rejects_non_positive_epsilon():
    with pytest.raises(ConfigError):
        SourceEnvelope.pulse(0.0)


def test_joule_source_examples(unit_square_mesh):
    mesh = unit_square_mesh
    gamma = ScalarField.constant(mesh, 1.0)
    assert np.allclose(joule_source(gamma, mesh.nodes[:, 0]).values, 1.0, atol=1e-12)
    assert np.allclose(joule_source(gamma, np.full(mesh.node_count, 3.0)).values, 0.0)
    h = BoundaryTrace.from_function(mesh, lambda p: p[:, 0] ** 2)
    w = ConductivitySolver(gamma).solve(h)
    power = joule_source(gamma, w)
    assert power.values.min() >= 0
    assert integrate(power) == pytest.approx(dtn_map(gamma).form(h, h), abs=1e-8)


def test_evolve_rejects_bad_step(coarse_model):
    operator, _ = coarse_model
    with pytest.raises(ConfigError):
        evolve_heat(operator, HeatSource.of(np.ones(operator.mesh.node_count), CONSTANT), 1.0, 0.0)


def test_zero_source_stays_zero(coarse_model):
    operator, _ = coarse_model
    history = evolve_heat(operator, HeatSource.of(np.zeros(operator.mesh.node_count), CONSTANT), 0.1, 0.01)
    assert np.all(history.states == 0)
    assert np.all(history.fluxes == 0)


def test_single_mode_evolution(coarse_model):
    operator, spectral = coarse_model
    phi, lam = spectral.eigenvectors[:, 0], spectral.eigenvalues[0]
    history = evolve_heat(operator, HeatSource.of(phi, CONSTANT), 0.1, 5e-4)
    exact = (1 - np.exp(-lam * 0.1)) * phi / lam
    error = weighted_norm(operator, history.states[-1] - exact) / weighted_norm(operator, exact)
    assert error < 1e-4
    assert np.all(history.states[:, operator.mesh.boundary_nodes] == 0)


def test_stepping_matches_duhamel(coarse_model):
    operator, spectral = coarse_model
    mesh = operator.mesh
    envelope = SourceEnvelope.custom(lambda t: np.sin(np.pi * np.asarray(t, dtype=float)))
    source = HeatSource.of(1 + mesh.nodes[:, 0] * mesh.nodes[:, 1], envelope)
    history = evolve_heat(operator, source, 0.2, 1e-3)
    reference = duhamel_solution(spectral, source, 0.2)
    assert reference.tail < 1e-12
    error = weighted_norm(operator, history.states[-1] - reference.state.values)
    assert error / weighted_norm(operator, reference.state.values) < 1e-4


def test_duhamel_examples(coarse_model):
    operator, spectral = coarse_model
    phi, lam = spectral.eigenvectors[:, 0], spectral.eigenvalues[0]
    one_mode = duhamel_solution(spectral, HeatSource.of(phi, CONSTANT), 0.3).state.values
    assert np.allclose(one_mode, (1 - np.exp(-0.3 * lam)) * phi / lam, atol=1e-10)
    assert np.all(duhamel_solution(spectral, HeatSource.of(phi, CONSTANT), 0.0).state.values == 0)
    density = np.ones(operator.mesh.node_count)
    late = duhamel_solution(spectral, HeatSource.of(density, SourceEnvelope.ramp()), 3.0).state.values
    equilibrium = operator.solve_inverse(density)
    assert weighted_norm(operator, late - equilibrium) < 1e-6


def test_flux_energy_balance(coarse_model):
    operator, _ = coarse_model
    mesh = operator.mesh
    density = 1 + mesh.nodes[:, 0]
    history = evolve_heat(operator, HeatSource.of(density, SourceEnvelope.ramp()), 1.5, 0.01)
    ones = np.ones(mesh.node_count)
    for i, t in enumerate(history.times):
        stored = ones @ operator.mass @ history.rates[i]
        supplied = float(SourceEnvelope.ramp().squared(t)) * (ones @ operator.mass @ density)
        outflow = history.fluxes[i] @ mesh.boundary_mass
        assert stored == pytest.approx(supplied + outflow, abs=1e-10)


def test_equilibrium_convergence(unit_square_mesh, unit_coefficients):
    kappa, tensor = unit_coefficients
    operator = assemble_P(kappa, tensor)
    lam = dirichlet_spectrum(operator, 1).eigenvalues[0]
    density = np.ones(unit_square_mesh.node_count)
    t_end = 1 + 14 / lam + 0.2
    history = evolve_heat(operator, HeatSource.of(density, SourceEnvelope.ramp()), t_end, 0.01)
    equilibrium = operator.solve_inverse(density)
    target = operator.apply(equilibrium)
    after = history.times >= 1.0
    state_errors = np.array([weighted_norm(operator, s - equilibrium) for s in history.states[after]])
    operator_errors = np.array([weighted_norm(operator, operator.apply(s) - target) for s in history.states[after]])
    for errors in (state_errors, operator_errors):
        assert np.all(np.diff(errors) <= 1e-9 * errors[0])
        assert np.all(errors[history.times[after] >= 1 + 14 / lam] <= 1e-6)


def test_sigma_map_equilibrium_identity(fine_square_mesh):
    mesh = fine_square_mesh
    gamma = ScalarField.constant(mesh, 1.0)
    h = BoundaryTrace.from_function(mesh, lambda p: p[:, 0])
    trace = sigma_map(gamma, gamma, TensorField.identity(mesh), h, SourceEnvelope.ramp(), 5.0, 1e-2)
    assert trace.total()[-1] == pytest.approx(-1.0, abs=2e-3)
    assert np.all(trace.values[0] == 0)


def test_sigma_map_is_quadratic_and_zero_for_zero(coarse_square_mesh):
    mesh = coarse_square_mesh
    gamma = ScalarField.from_function(mesh, lambda p: 1 + 0.3 * p[:, 1])
    kappa, tensor = ScalarField.constant(mesh, 1.0), TensorField.identity(mesh)
    h = BoundaryTrace.from_function(mesh, lambda p: p[:, 0] - p[:, 1] ** 2)
    ramp = SourceEnvelope.ramp()
    zero = sigma_map(gamma, kappa, tensor, np.zeros(mesh.boundary_nodes.size), ramp, 1.2, 0.05)
    assert np.all(zero.values == 0)
    single = sigma_map(gamma, kappa, tensor, h, ramp, 1.2, 0.05)
    double = sigma_map(gamma, kappa, tensor, 2 * h.values, ramp, 1.2, 0.05)
    assert np.allclose(double.values, 4 * single.values, atol=1e-12 * np.abs(single.values).max())


def test_polarization_matches_bilinear_source(coarse_square_mesh):
    mesh = coarse_square_mesh
    gamma = ScalarField.constant(mesh, 1.0)
    kappa, tensor = ScalarField.constant(mesh, 1.0), TensorField.identity(mesh)
    h = BoundaryTrace.from_function(mesh, lambda p: p[:, 0])
    h_tilde = BoundaryTrace.from_function(mesh, lambda p: p[:, 0] * p[:, 1])
    pulse = SourceEnvelope.pulse(0.01)
    plus = sigma_map(gamma, kappa, tensor, h.values + h_tilde.values, pulse, 0.3, 0.01)
    minus = sigma_map(gamma, kappa, tensor, h.values - h_tilde.values, pulse, 0.3, 0.01)
    direct = sigma_map(gamma, kappa, tensor, h, pulse, 0.3, 0.01, h_tilde=h_tilde)
    polarized = FluxTrace.polarize(plus, minus)
    assert np.allclose(polarized.values, direct.values, atol=1e-10 * np.abs(direct.values).max())


def test_xi_map_examples(coarse_model):
    operator, spectral = coarse_model
    mesh = operator.mesh
    kappa, tensor = operator.kappa, operator.tensor
    zero = xi_map(kappa, tensor, np.zeros(mesh.node_count), SourceEnvelope.ramp(), 1.0, 0.1, operator=operator)
    assert np.all(zero.values == 0)
    impulse = xi_map(kappa, tensor, spectral.eigenvectors[:, 0], SourceEnvelope.impulse(), 0.5, 0.01,
                     spectral=spectral, operator=operator)
    expected = np.outer(np.exp(-spectral.eigenvalues[0] * impulse.times), spectral.flux_traces[:, 0])
    assert np.allclose(impulse.values, expected, atol=1e-4 * np.abs(expected).max())
    ramp = xi_map(kappa, tensor, np.ones(mesh.node_count), SourceEnvelope.ramp(), 4.0, 0.01, operator=operator)
    assert ramp.total()[-1] == pytest.approx(-1.0, abs=1e-3)


def test_impulse_response_examples(coarse_model):
    operator, spectral = coarse_model
    times = np.array([0.01, 0.1, 1.0, 10.0])
    trace = impulse_response(spectral, spectral.eigenvectors[:, 0], times)
    expected = np.outer(np.exp(-spectral.eigenvalues[0] * times), spectral.flux_traces[:, 0])
    assert np.allclose(trace.values, expected, atol=1e-12)
    assert np.abs(trace.values[-1]).max() < 1e-60
    with pytest.raises(ConfigError):
        impulse_response(spectral, spectral.eigenvectors[:, 0], np.array([0.0, 1.0]))


def polarized_source(mesh):
    gamma = ScalarField.constant(mesh, 1.0)
    solver = ConductivitySolver(gamma)
    w = solver.solve(BoundaryTrace.from_function(mesh, lambda p: p[:, 0]).values)
    w_tilde = solver.solve(BoundaryTrace.from_function(mesh, lambda p: p[:, 0] ** 2 - p[:, 1] ** 2).values)
    return joule_source(gamma, w, w_tilde).values


def relative_gap(a: FluxTrace, b: FluxTrace) -> float:
    return np.linalg.norm(a.values - b.values) / np.linalg.norm(b.values)


def test_pulse_traces_follow_finite_width_weights(coarse_model):
    operator, spectral = coarse_model
    density = polarized_source(operator.mesh)
    times = np.linspace(0.05, 1.0, 96)
    epsilon = 1e-3
    pulse = spectral_flux(spectral, HeatSource.of(density, SourceEnvelope.pulse(epsilon)), times)
    d = spectral.coefficients(density)
    weights = np.array([pulse_moment(lam, epsilon) for lam in spectral.eigenvalues])
    expected = (np.exp(-np.outer(times, spectral.eigenvalues)) * d * weights) @ spectral.flux_traces.T
    assert np.allclose(pulse.values, expected, atol=1e-10 * np.abs(expected).max())


def test_pulse_converges_to_impulse_at_first_order(coarse_model):
    operator, spectral = coarse_model
    density = polarized_source(operator.mesh)
    times = np.linspace(0.05, 1.0, 96)
    impulse = impulse_response(spectral, density, times)
    gaps = [relative_gap(spectral_flux(spectral, HeatSource.of(density, SourceEnvelope.pulse(eps)), times), impulse)
            for eps in (4e-3, 2e-3, 1e-3)]
    order = np.polyfit(np.log([4e-3, 2e-3, 1e-3]), np.log(gaps), 1)[0]
    assert order >= 0.9


def test_stepped_pulse_matches_spectral_pulse(coarse_model):
    operator, spectral = coarse_model
    density = polarized_source(operator.mesh)
    pulse = SourceEnvelope.pulse(1e-3)
    stepped = xi_map(operator.kappa, operator.tensor, density, pulse, 1.0, 1e-3, operator=operator)
    modal = xi_map(operator.kappa, operator.tensor, density, pulse, 1.0, 1e-3, spectral=spectral,
                   method="spectral", operator=operator)
    assert relative_gap(stepped.window(0.05, 1.0), modal.window(0.05, 1.0)) <= 1e-3


def test_device_exposes_only_fluxes(coarse_square_mesh):
    mesh = coarse_square_mesh
    device = HeatFlowDevice(ScalarField.constant(mesh, 1.0), ScalarField.constant(mesh, 2.0),
                            TensorField.identity(mesh), impulse_modes=10)
    h = BoundaryTrace.from_function(mesh, lambda p: p[:, 0])
    trace = device.sigma(h, SourceEnvelope.impulse(), 0.2, 0.01)
    assert isinstance(trace, FluxTrace)
    assert trace.times[0] == pytest.approx(0.01)
    assert not hasattr(device, "kappa") and not hasattr(device, "gamma")


def test_flux_trace_rejects_unsorted_times(coarse_square_mesh):
    mesh = coarse_square_mesh
    with pytest.raises(ConfigError):
        FluxTrace(mesh, np.array([0.0, 0.2, 0.1]), np.zeros((3, mesh.boundary_nodes.size)))
