"""Black-box identification: boundary measurements in, (γ̂, λ̂_k, κ̂) out."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, Field
from scipy import linalg

from src.thermoeit.cgo.density import cosine_basis
from src.thermoeit.discretization import BoundaryTrace, Mesh, ScalarField, TensorField, mass_matrix
from src.thermoeit.elliptic import ConductivitySolver, assemble_P, dirichlet_spectrum
from src.thermoeit.errors import ConfigError, IdentificationError, RankDeficiencyError, ThermoEitError
from src.thermoeit.heat_measurement import FluxTrace, HeatFlowDevice, SourceEnvelope, joule_source
from src.thermoeit.spectral_inverse.dirichlet_series import DirichletSeriesFit, fit_dirichlet_series
from src.thermoeit.spectral_inverse.dtn_form import (
    DtnFormTable,
    GammaFit,
    extract_dtn_form,
    fit_gamma_from_dtn,
    harmonic_polynomial_probes,
)
from src.thermoeit.spectral_inverse.kappa import KappaEstimate, ScaledCluster, kappa_from_scaled_modes


class IdentificationOptions(BaseModel):
    mode: Literal["sigma", "xi"] = "sigma"
    ramp_probes: int = Field(default=3, ge=1)
    ramp_t_end: float = Field(default=2.0, gt=1.0)
    ramp_dt: float = Field(default=0.01, gt=0)
    impulse_pairs: int = Field(default=16, ge=1)
    impulse_t_end: float = Field(default=0.4, gt=0)
    impulse_dt: float = Field(default=2e-3, gt=0)
    mode_budget: int = Field(default=30, ge=1)
    fit_window: Optional[Tuple[float, float]] = None
    basis_count: int = Field(default=10, ge=1)
    eigen_regularization: float = Field(default=1e-10, ge=0)
    gamma_regularization: float = Field(default=1e-8, ge=0)
    gamma_max_iterations: int = Field(default=30, ge=0)
    gamma_tolerance: float = Field(default=1e-8, gt=0)
    equilibrium_rtol: float = Field(default=1e-6, gt=0)
    kappa_mean: Optional[float] = Field(default=1.0, gt=0)
    boundary_tensor: Optional[List[List[float]]] = None
    kappa_iterations: int = Field(default=20, ge=1)
    flux_independence_min: float = Field(default=1e-3, ge=0, le=1)
    noise_amplitude: float = Field(default=0.0, ge=0)
    seed: int = 0


class ProbePlan(BaseModel):
    """Deterministic probe set; impulse pair j uses ζ_{2j} for h and ζ_{2j+1} for h̃."""

    mode: Literal["sigma", "xi"]
    seed: int
    ramp_count: int
    pair_count: int
    zeta_real: List[List[float]] = Field(default_factory=list)
    zeta_imag: List[List[float]] = Field(default_factory=list)

    @classmethod
    def build(cls, mesh: Mesh, options: IdentificationOptions) -> "ProbePlan":
        rng = np.random.default_rng(options.seed)
        scale = 1.0 / mesh.diameter
        real, imag = [], []
        if options.mode == "sigma":
            for _ in range(2 * options.impulse_pairs):
                magnitude = scale * rng.uniform(1.0, 4.0)
                if mesh.dimension == 2:
                    theta = rng.uniform(0.0, 2.0 * np.pi)
                    e1 = np.array([np.cos(theta), np.sin(theta)])
                    e2 = np.array([-np.sin(theta), np.cos(theta)])
                else:
                    e1, e2 = linalg.qr(rng.standard_normal((3, 2)), mode="economic")[0].T
                # ζ = a(e1 + i e2) with e1 ⟂ e2 unit, so ζ·ζ = 0
                real.append((magnitude * e1).tolist())
                imag.append((magnitude * e2).tolist())
        return cls(mode=options.mode, seed=options.seed, ramp_count=options.ramp_probes,
                   pair_count=options.impulse_pairs, zeta_real=real, zeta_imag=imag)

    def ramp_traces(self, mesh: Mesh) -> List[BoundaryTrace]:
        return harmonic_polynomial_probes(mesh, self.ramp_count)

    def _exponential(self, mesh: Mesh, index: int) -> NDArray[np.complex128]:
        center = 0.5 * (mesh.bounds[0] + mesh.bounds[1])
        zeta = np.asarray(self.zeta_real[index]) + 1j * np.asarray(self.zeta_imag[index])
        return np.exp((mesh.boundary_coordinates - center) @ zeta)

    def impulse_pairs(self, mesh: Mesh) -> List[Tuple[NDArray, NDArray]]:
        """(h, h̃) = (Re e^{ζ·x}, Im e^{ζ′·x}) boundary values."""
        return [(self._exponential(mesh, 2 * j).real, self._exponential(mesh, 2 * j + 1).imag)
                for j in range(self.pair_count)]

    def profiles(self, mesh: Mesh) -> NDArray[np.float64]:
        """Spatial source profiles H_j for source-to-flux probes, shape (pairs, N)."""
        return cosine_basis(mesh.bounds[0], mesh.bounds[1], self.pair_count)(mesh.nodes)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Everything ``reconstruct`` is allowed to see."""

    mesh: Mesh
    plan: ProbePlan
    options: IdentificationOptions
    times: NDArray[np.float64]
    traces: NDArray[np.float64]
    dtn_gram: Optional[NDArray[np.float64]] = None
    dtn_values: Dict[str, float] = field(default_factory=dict)

    def flux_traces(self) -> List[FluxTrace]:
        return [FluxTrace(self.mesh, self.times, values, {"probe": j}) for j, values in enumerate(self.traces)]

    def to_json(self) -> Dict[str, Any]:
        return {
            "plan": self.plan.model_dump(),
            "options": self.options.model_dump(),
            "dtn_gram": None if self.dtn_gram is None else self.dtn_gram.tolist(),
            "dtn_values": self.dtn_values,
        }

    def save(self, store) -> None:
        metadata = self.to_json()
        metadata["mesh_path"] = store.store_array("mesh_nodes", self.mesh.nodes)
        metadata["elements_path"] = store.store_array("mesh_elements", self.mesh.elements)
        metadata["mesh"] = {"dimension": self.mesh.dimension, "shape": self.mesh.shape, "radius": self.mesh.radius,
                            "bounds": self.mesh.bounds.tolist()}
        metadata["times_path"] = store.store_array("times", self.times)
        metadata["traces_path"] = store.store_array("traces", self.traces)
        store.store_json("measurements", metadata)

    @classmethod
    def load(cls, store) -> "MeasurementSet":
        metadata = store.read_json("measurements")
        geometry = metadata["mesh"]
        mesh = Mesh.from_json({**geometry, "nodes": store.read_array(metadata["mesh_path"]),
                               "elements": store.read_array(metadata["elements_path"])})
        gram = metadata.get("dtn_gram")
        return cls(mesh, ProbePlan(**metadata["plan"]), IdentificationOptions(**metadata["options"]),
                   store.read_array(metadata["times_path"]), store.read_array(metadata["traces_path"]),
                   None if gram is None else np.asarray(gram, dtype=float), dict(metadata.get("dtn_values", {})))


def _with_noise(values: NDArray, amplitude: float, rng: np.random.Generator) -> NDArray:
    if amplitude == 0:
        return values
    return values + amplitude * np.abs(values).max() * rng.standard_normal(values.shape)


def measure(device: HeatFlowDevice, options: IdentificationOptions, threads: int = 1) -> MeasurementSet:
    """Run the probe plan against the device; only boundary fluxes are recorded."""
    mesh = device.mesh
    plan = ProbePlan.build(mesh, options)
    impulse = SourceEnvelope.impulse()
    gram, values = None, {}

    if options.mode == "sigma":
        ramp = SourceEnvelope.ramp()
        table = extract_dtn_form(lambda h: device.sigma(h, ramp, options.ramp_t_end, options.ramp_dt),
                                 plan.ramp_traces(mesh), threads=threads, rtol=options.equilibrium_rtol, mesh=mesh)
        gram, values = table.gram, table.values

        def polarized(pair):
            h, h_tilde = pair
            plus = device.sigma(h + h_tilde, impulse, options.impulse_t_end, options.impulse_dt)
            minus = device.sigma(h - h_tilde, impulse, options.impulse_t_end, options.impulse_dt)
            return FluxTrace.polarize(plus, minus)

        requests, run = plan.impulse_pairs(mesh), polarized
    else:
        def run(profile):
            return device.xi(profile, impulse, options.impulse_t_end, options.impulse_dt)

        requests = list(plan.profiles(mesh))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        traces = list(executor.map(run, requests))

    rng = np.random.default_rng(options.seed + 1)
    stacked = _with_noise(np.stack([trace.values for trace in traces]), options.noise_amplitude, rng)
    logger.info("Recorded measurements", mode=options.mode, probes=len(traces), samples=traces[0].times.size)
    return MeasurementSet(mesh, plan, options, traces[0].times, stacked, gram, values)


@dataclass(frozen=True)
class StageFailure:
    stage: str
    code: str
    message: str
    exit_code: int


@dataclass(eq=False)
class IdentificationResult:
    mesh: Mesh
    mode: str
    dtn: Optional[DtnFormTable] = None
    gamma: Optional[GammaFit] = None
    series: Optional[DirichletSeriesFit] = None
    flux_independence: List[float] = field(default_factory=list)
    eigenfunction_residuals: List[float] = field(default_factory=list)
    clusters: List[ScaledCluster] = field(default_factory=list)
    kappa: Optional[KappaEstimate] = None
    failures: List[StageFailure] = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return not self.failures

    def raise_for_failures(self):
        if self.failures:
            summary = "; ".join(f"{f.stage}: {f.message}" for f in self.failures)
            raise IdentificationError(f"identification failed in {len(self.failures)} stage(s): {summary}")

    def to_json(self) -> Dict[str, Any]:
        series = self.series
        return {
            "mode": self.mode,
            "eigenvalues": [] if series is None else series.exponents.tolist(),
            "multiplicities": [] if series is None else series.multiplicities.tolist(),
            "residuals": {
                "gamma_misfit": None if self.gamma is None else self.gamma.misfit,
                "series": None if series is None else series.residual,
                "eigenfunctions": self.eigenfunction_residuals,
            },
            "flux_independence": self.flux_independence,
            "gamma_params": None if self.gamma is None else self.gamma.parameters.tolist(),
            "dtn_gram": None if self.dtn is None else self.dtn.gram.tolist(),
            "kappa": None if self.kappa is None else self.kappa.to_json(),
            "failures": [asdict(failure) for failure in self.failures],
        }


def probe_densities(measurements: MeasurementSet, gamma: Optional[ScalarField]) -> NDArray[np.float64]:
    """Power densities P_j = γ̂∇w^{h_j}·∇w^{h̃_j}, or the profiles H_j in source mode, shape (J, N)."""
    mesh = measurements.mesh
    if measurements.plan.mode == "xi":
        return measurements.plan.profiles(mesh)
    solver = ConductivitySolver(gamma)
    rows = []
    for h, h_tilde in measurements.plan.impulse_pairs(mesh):
        rows.append(joule_source(gamma, solver.solve(h), solver.solve(h_tilde)).values)
    return np.stack(rows)


def recover_scaled_modes(mesh: Mesh, series: DirichletSeriesFit, densities: NDArray, basis_count: int,
                         regularization: float) -> Tuple[List[ScaledCluster], List[float]]:
    """Solve ∫ P_j ψ̃ = C_jl per cluster on a basis of Dirichlet Laplacian eigenfunctions."""
    reference = assemble_P(ScalarField.constant(mesh, 1.0), TensorField.identity(mesh))
    basis = dirichlet_spectrum(reference, basis_count).eigenvectors
    design = densities @ (mass_matrix(mesh) @ basis)
    gram = design.T @ design
    alpha = regularization * float(np.linalg.norm(design, 2) ** 2)
    lhs = gram + alpha * np.eye(gram.shape[0])

    clusters, residuals, used = [], [], 0
    for k in range(series.cluster_count):
        m = int(series.multiplicities[k])
        if not series.observable[k] or used + m > basis.shape[1]:
            break
        target = series.coefficients[k]
        weights = linalg.solve(lhs, design.T @ target, assume_a="pos")
        residuals.append(float(np.linalg.norm(design @ weights - target) / np.linalg.norm(target)))
        clusters.append(ScaledCluster(float(series.exponents[k]), basis @ weights, series.amplitude_traces[k]))
        used += m
    logger.debug("Recovered scaled eigenfunctions", clusters=len(clusters), functions=used,
                 residuals=residuals)
    return clusters, residuals


def check_flux_independence(series: DirichletSeriesFit, threshold: float) -> List[float]:
    """Per-cluster σ_m/σ_1 of the untruncated amplitude matrix; raises when a cluster's fluxes are not independent."""
    ratios = series.conditioning.tolist()
    weak = [k for k, ratio in enumerate(ratios) if ratio < threshold]
    if weak:
        k = weak[0]
        raise RankDeficiencyError(
            f"flux traces of cluster {k} (λ = {series.exponents[k]:.6g}, multiplicity {series.multiplicities[k]}) "
            f"are nearly dependent: {ratios[k]:.3g} < {threshold:g}", ratios)
    return ratios


def reconstruct(measurements: MeasurementSet, options: Optional[IdentificationOptions] = None) -> IdentificationResult:
    """Run every identification stage on recorded boundary data; failures are labelled, not raised.

    κ comes from the ratio estimator ``kappa_from_scaled_modes``, which needs only the fitted clusters;
    ``recover_kappa`` needs the true SpectralData and is for validation against a known operator.
    """
    options = options or measurements.options
    mesh = measurements.mesh
    result = IdentificationResult(mesh, measurements.plan.mode)

    def stage(name: str, action):
        try:
            return action()
        except ThermoEitError as e:
            logger.error("Identification stage failed", stage=name, code=e.code, error=str(e))
            result.failures.append(StageFailure(name, e.code, str(e), e.exit_code))
            return None

    gamma_field = None
    if measurements.plan.mode == "sigma":
        if measurements.dtn_gram is None:
            raise ConfigError("conductivity-mode measurements carry no DtN form")
        probes = np.stack([trace.values for trace in measurements.plan.ramp_traces(mesh)], axis=1)
        result.dtn = DtnFormTable(mesh, probes, measurements.dtn_gram, measurements.dtn_values)
        result.gamma = stage("conductivity", lambda: fit_gamma_from_dtn(
            result.dtn, regularization=options.gamma_regularization, max_iterations=options.gamma_max_iterations,
            tolerance=options.gamma_tolerance))
        if result.gamma is None:
            return result
        gamma_field = result.gamma.gamma

    result.series = stage("dirichlet_series", lambda: fit_dirichlet_series(
        measurements.flux_traces(), options.mode_budget, window=options.fit_window))
    if result.series is None:
        return result
    result.flux_independence = result.series.conditioning.tolist()
    if stage("flux_independence", lambda: check_flux_independence(
            result.series, options.flux_independence_min)) is None:
        return result

    densities = probe_densities(measurements, gamma_field)
    recovered = stage("eigenfunctions", lambda: recover_scaled_modes(
        mesh, result.series, densities, options.basis_count, options.eigen_regularization))
    if recovered is None:
        return result
    result.clusters, result.eigenfunction_residuals = recovered

    tensor = None if options.boundary_tensor is None else TensorField.constant(mesh, options.boundary_tensor)
    result.kappa = stage("kappa", lambda: kappa_from_scaled_modes(
        mesh, result.clusters, tensor, options.kappa_mean, options.kappa_iterations))
    logger.info("Identification finished", failures=len(result.failures),
                eigenvalues=result.series.exponents[:5].tolist())
    return result


def full_pipeline(device: HeatFlowDevice, options: Optional[IdentificationOptions] = None,
                  threads: int = 1) -> IdentificationResult:
    options = options or IdentificationOptions()
    return reconstruct(measure(device, options, threads), options)
