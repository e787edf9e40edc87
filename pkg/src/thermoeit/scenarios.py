"""Experiment scenarios behind the CLI subcommands.

Every scenario writes into an ``ArtifactStore`` and stamps each JSON artifact with
the experiment's ``config_digest``. ``measure`` keeps the true coefficients in a
``truth`` directory next to ``measurements``; ``reconstruct`` only opens the latter.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from src.thermoeit.boundary_recovery import estimate_boundary_tensor, halfspace_root, probe_boundary_decay
from src.thermoeit.cgo import density_gram_test, extend_gamma, make_phase_pair, solve_remainder
from src.thermoeit.discretization import BoundaryTrace, ScalarField, build_box_mesh
from src.thermoeit.elliptic import ConductivitySolver, assemble_P, dirichlet_spectrum
from src.thermoeit.errors import ConfigError
from src.thermoeit.experiment import ExperimentConfig, evaluate_tensor
from src.thermoeit.expressions import Expression
from src.thermoeit.hashing import array_digest, generate_hash
from src.thermoeit.heat_measurement import FluxTrace, HeatFlowDevice, HeatSource, evolve_heat, joule_source, xi_map
from src.thermoeit.protocol import IdentificationReport, validate_report
from src.thermoeit.spectral_inverse import IdentificationResult, MeasurementSet, measure, reconstruct
from src.thermoeit.storage import ArtifactStore

MEASUREMENTS_DIR = "measurements"
TRUTH_DIR = "truth"


@dataclass
class ScenarioOutcome:
    name: str
    root: Path
    artifacts: List[str]
    summary: Dict[str, Any]


def _coordinate_columns(dimension: int) -> List[str]:
    return ["x", "y", "z"][:dimension]


def _stamp(config: ExperimentConfig, payload: Dict[str, Any]) -> Dict[str, Any]:
    return {"config_digest": config.digest, **payload}


def run_forward(config: ExperimentConfig, store: ArtifactStore, threads: int = 1) -> ScenarioOutcome:
    """Conductivity solve, Joule source and heat flux for ``[sources]`` on the configured domain."""
    store.setup()
    mesh = config.domain.build_mesh()
    gamma = config.coefficients.gamma_field(mesh)
    kappa = config.coefficients.kappa_field(mesh)
    tensor = config.coefficients.tensor_field(mesh)
    envelope = config.sources.build_envelope()
    t_end, dt = config.time.t_end, config.time.dt

    conductivity = ConductivitySolver(gamma)
    w = conductivity.solve(BoundaryTrace.from_function(mesh, Expression.compile(config.sources.h)))
    w_tilde = None
    if config.sources.h_tilde is not None:
        w_tilde = conductivity.solve(BoundaryTrace.from_function(mesh, Expression.compile(config.sources.h_tilde)))
    density = joule_source(gamma, w, w_tilde)
    operator = assemble_P(kappa, tensor)

    psi = np.zeros(mesh.node_count)
    if envelope.is_impulse:
        spectral = dirichlet_spectrum(operator, config.solver.impulse_modes, config.solver.cluster_rtol)
        trace = xi_map(kappa, tensor, density, envelope, t_end, dt, spectral=spectral, operator=operator)
    else:
        history = evolve_heat(operator, HeatSource.of(density, envelope), t_end, dt)
        trace = FluxTrace(mesh, history.times, history.fluxes, {"envelope": envelope.describe(), "dt": dt})
        psi = history.states[-1]

    header = ["node", *_coordinate_columns(mesh.dimension), "gamma", "kappa", "w", "power_density", "psi_final"]
    rows = [[i, *mesh.nodes[i].tolist(), gamma.values[i], kappa.values[i], w[i], density.values[i], psi[i]]
            for i in range(mesh.node_count)]
    artifacts = [store.store_csv("fields", header, rows),
                 store.store_csv("flux", ["t", "node", "flux"], trace.to_rows())]
    total = trace.total()
    summary = {"nodes": mesh.node_count, "boundary_nodes": int(mesh.boundary_nodes.size),
               "envelope": envelope.describe(), "t_end": float(trace.times[-1]),
               "total_flux_final": float(total[-1]), "total_flux_peak": float(np.abs(total).max())}
    artifacts.append(store.store_json("forward", _stamp(config, {**summary, "total_flux": total})))
    logger.info("Forward run finished", **summary)
    return ScenarioOutcome("forward", store.root, artifacts, summary)


def run_spectrum(config: ExperimentConfig, store: ArtifactStore, threads: int = 1) -> ScenarioOutcome:
    store.setup()
    mesh = config.domain.build_mesh()
    operator = assemble_P(config.coefficients.kappa_field(mesh), config.coefficients.tensor_field(mesh))
    spectral = dirichlet_spectrum(operator, config.solver.eigen_count, config.solver.cluster_rtol)
    multiplicities = spectral.multiplicities
    rows = [[k + 1, spectral.eigenvalues[k], int(label), multiplicities[label]]
            for k, label in enumerate(spectral.labels)]
    artifacts = [store.store_csv("spectrum", ["index", "eigenvalue", "cluster", "multiplicity"], rows),
                 store.store_json("spectrum", _stamp(config, spectral.to_json()))]
    summary = {"count": spectral.count, "lowest": float(spectral.eigenvalues[0]),
               "clusters": len(multiplicities)}
    logger.info("Spectrum computed", **summary)
    return ScenarioOutcome("spectrum", store.root, artifacts, summary)


def measurement_digest(measurements: MeasurementSet) -> str:
    return generate_hash({"metadata": measurements.to_json(),
                          "arrays": array_digest(measurements.mesh.nodes, measurements.mesh.elements,
                                                 measurements.times, measurements.traces)})


def run_measure(config: ExperimentConfig, store: ArtifactStore, threads: int = 1,
                mode: Optional[str] = None) -> ScenarioOutcome:
    """Probe the black-box device; boundary data and truth go to separate directories."""
    mesh = config.domain.build_mesh()
    gamma = config.coefficients.gamma_field(mesh)
    kappa = config.coefficients.kappa_field(mesh)
    tensor = config.coefficients.tensor_field(mesh)
    options = config.identification_options()
    if mode is not None:
        options = options.model_copy(update={"mode": mode})

    device = HeatFlowDevice(gamma, kappa, tensor, impulse_modes=config.solver.impulse_modes)
    measurements = measure(device, options, threads)

    data = ArtifactStore(store.root / MEASUREMENTS_DIR).setup()
    measurements.save(data)
    digest = measurement_digest(measurements)
    data.store_json("measure", _stamp(config, {"inputs_digest": digest, "mode": options.mode,
                                               "probes": int(measurements.traces.shape[0]),
                                               "samples": int(measurements.times.size)}))

    truth = ArtifactStore(store.root / TRUTH_DIR).setup()
    truth.store_array("gamma", gamma.values)
    truth.store_array("kappa", kappa.values)
    truth.store_array("tensor", tensor.values)
    truth.store_json("truth", _stamp(config, {"coefficients": config.coefficients.model_dump()}))

    summary = {"mode": options.mode, "probes": int(measurements.traces.shape[0]), "inputs_digest": digest}
    logger.info("Measurements recorded", directory=str(data.root), **summary)
    return ScenarioOutcome("measure", store.root, [str(Path(MEASUREMENTS_DIR)), str(Path(TRUTH_DIR))], summary)


def run_reconstruct(measurement_dir: Path, store: ArtifactStore,
                    threads: int = 1) -> Tuple[ScenarioOutcome, IdentificationResult]:
    """Full identification from a measurement directory alone."""
    data = ArtifactStore(measurement_dir)
    if not data.exists("measurements.json"):
        raise ConfigError(f"{measurement_dir} is not a measurement directory (no measurements.json)")
    measurements = MeasurementSet.load(data)
    stamp = data.read_json("measure") if data.exists("measure.json") else {}
    result = reconstruct(measurements)

    store.setup()
    artifacts = []
    kappa_path = gamma_path = None
    if result.kappa is not None:
        kappa_path = store.store_array("kappa_hat", result.kappa.field.values)
        artifacts.append(kappa_path)
    if result.gamma is not None:
        gamma_path = store.store_array("gamma_hat", result.gamma.gamma.values)
        artifacts.append(gamma_path)
    if result.series is not None:
        rows = [[k + 1, result.series.exponents[k], int(result.series.multiplicities[k])]
                for k in range(result.series.cluster_count)]
        artifacts.append(store.store_csv("eigenvalues", ["cluster", "eigenvalue", "multiplicity"], rows))

    report = IdentificationReport.from_result(result, inputs_digest=measurement_digest(measurements),
                                              config_digest=stamp.get("config_digest"),
                                              kappa_field_path=kappa_path, gamma_field_path=gamma_path)
    payload = validate_report(report.model_dump(mode="json"))
    artifacts.append(store.store_json("report", payload))
    summary = {"stage": report.stage, "eigenvalues": report.eigenvalues[:5], "failures": len(report.failures)}
    logger.info("Reconstruction finished", **summary)
    return ScenarioOutcome("reconstruct", store.root, artifacts, summary), result


def run_halfspace(config: ExperimentConfig, store: ArtifactStore, threads: int = 1) -> ScenarioOutcome:
    """Decay probing on a slab with A from ``[coefficients]``, then the boundary tensor fit."""
    store.setup()
    spec = config.halfspace
    mesh = spec.build_mesh()
    tensor = config.coefficients.tensor_field(mesh)
    point = np.asarray(spec.point, dtype=float)
    frequencies = spec.frequency_values()
    probes = probe_boundary_decay(tensor, point, frequencies, spec.depths, threads=threads)

    local = evaluate_tensor(config.coefficients.tensor_expressions(2), point[None, :])[0]
    predicted = [halfspace_root(local, [xi]) for xi in frequencies]
    rows = [row for probe in probes for row in probe.to_rows()]
    artifacts = [store.store_csv("decay", ["xi", "depth", "amplitude_re", "amplitude_im"], rows)]
    probe_json = [{**probe.to_json(), "predicted_decay_rate": root.imag, "predicted_oscillation_rate": root.real}
                  for probe, root in zip(probes, predicted)]
    artifacts.append(store.store_json("probes", _stamp(config, {"probes": probe_json, "tensor_at_point": local})))

    estimate = estimate_boundary_tensor(probes, normal_coefficient=spec.normal_coefficient)
    artifacts.append(store.store_json("boundary_tensor", _stamp(config, estimate.to_json())))
    summary = {"decay_rates": [p.decay_rate for p in probes], "A_hat": estimate.tensor.tolist(),
               "residual": estimate.residual}
    logger.info("Half-space probing finished", **summary)
    return ScenarioOutcome("halfspace", store.root, artifacts, summary)


def run_cgo_sweep(config: ExperimentConfig, store: ArtifactStore, threads: int = 1) -> ScenarioOutcome:
    """Remainder norms over |ρ| on the unit cube, their log-log slope, and the density Gram rank."""
    store.setup()
    spec = config.cgo
    mesh = build_box_mesh(3, [1.0, 1.0, 1.0], [spec.divisions] * 3)
    gamma_expression = Expression.compile(spec.gamma)
    extension = extend_gamma(gamma_expression, mesh=mesh, grid=spec.grid)

    def solve(magnitude: float):
        pair = make_phase_pair(spec.xi, magnitude)
        solution = solve_remainder(extension, pair.rho1, pair.eta2)
        return [float(np.linalg.norm(pair.rho1)), solution.remainder_norm, solution.residual,
                solution.conductivity_residual(), solution.iterations]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        rows = list(executor.map(solve, spec.magnitudes))

    norms = np.array([row[1] for row in rows])
    magnitudes = np.array([row[0] for row in rows])
    slope = None
    if len(rows) >= 2 and np.all(norms > 0):
        slope = float(np.polyfit(np.log(magnitudes), np.log(norms), 1)[0])
    density = density_gram_test(ScalarField.from_function(mesh, gamma_expression, name="gamma"),
                                spec.probe_count, spec.basis_dim, seed=config.seed)

    artifacts = [store.store_csv("cgo_sweep", ["rho_norm", "remainder_norm", "residual", "conductivity_residual",
                                               "iterations"], rows),
                 store.store_json("density", _stamp(config, density.to_json())),
                 store.store_json("cgo_sweep", _stamp(config, {"slope": slope, "rows": rows}))]
    summary = {"slope": slope, "density_rank": density.rank, "basis_dim": density.basis_dim}
    logger.info("CGO sweep finished", **summary)
    return ScenarioOutcome("cgo-sweep", store.root, artifacts, summary)
