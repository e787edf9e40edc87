"""Coarse property checks run by ``verify``.

Each check builds its own small problem, so the suite takes seconds and does not
depend on the experiment's resolution. Coefficient-dependent checks use the
configured coefficients on a coarse copy of the configured domain.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
from loguru import logger
from scipy import linalg

from src.thermoeit.boundary_recovery import HalfspaceProbe, estimate_boundary_tensor, halfspace_root
from src.thermoeit.cgo import extend_gamma, make_phase_pair, solve_remainder
from src.thermoeit.discretization import BoundaryTrace, ScalarField, TensorField, build_box_mesh
from src.thermoeit.elliptic import assemble_P, dirichlet_spectrum
from src.thermoeit.errors import ThermoEitError
from src.thermoeit.experiment import DomainSpec, ExperimentConfig
from src.thermoeit.heat_measurement import FluxTrace, SourceEnvelope, sigma_map
from src.thermoeit.spectral_inverse import fit_dirichlet_series, match_eigenspaces
from src.thermoeit.storage import ArtifactStore

COARSE_DIVISIONS = {2: 12, 3: 6}


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: Dict[str, Any] = field(default_factory=dict)
    error: str = ""


Check = Callable[[ExperimentConfig], Tuple[float, float, Dict[str, Any]]]


def _coarse_domain(config: ExperimentConfig) -> DomainSpec:
    domain = config.domain
    divisions = [COARSE_DIVISIONS[domain.dimension]] * (1 if domain.shape == "disk" else domain.dimension)
    return domain.model_copy(update={"divisions": divisions})


def check_dtn_equilibrium(config):
    """|∫∂Ω Σ(x₁) dS + ∫|∇x₁|²| at t = 3 for γ = κ = 1, A = I on a 16² square."""
    mesh = build_box_mesh(2, [1.0, 1.0], [16, 16])
    unit = ScalarField.constant(mesh, 1.0)
    h = BoundaryTrace.from_function(mesh, lambda p: p[:, 0])
    trace = sigma_map(unit, unit, TensorField.identity(mesh), h, SourceEnvelope.ramp(), 3.0, 1e-2)
    total = float(trace.total()[-1])
    return abs(total + 1.0), 2e-3, {"total_flux": total}


def check_square_spectrum(config):
    mesh = build_box_mesh(2, [1.0, 1.0], [32, 32])
    spectral = dirichlet_spectrum(assemble_P(ScalarField.constant(mesh, 1.0), TensorField.identity(mesh)), 4)
    error = abs(spectral.eigenvalues[0] / (2 * np.pi ** 2) - 1.0)
    detail = {"eigenvalues": spectral.eigenvalues, "multiplicities": spectral.multiplicities[:2]}
    if spectral.multiplicities[:2] != [1, 2]:
        return float("inf"), 1e-2, detail
    return error, 1e-2, detail


def check_torsion(config):
    mesh = build_box_mesh(2, [1.0, 1.0], [32, 32])
    operator = assemble_P(ScalarField.constant(mesh, 1.0), TensorField.identity(mesh))
    torsion = operator.solve_inverse(np.ones(mesh.node_count))
    center = int(np.argmin(np.linalg.norm(mesh.nodes - 0.5, axis=1)))
    return abs(torsion[center] / 0.07367 - 1.0), 1e-2, {"center_value": float(torsion[center])}


def check_self_adjointness(config):
    mesh = _coarse_domain(config).build_mesh()
    operator = assemble_P(config.coefficients.kappa_field(mesh), config.coefficients.tensor_field(mesh))
    rng = np.random.default_rng(config.seed)
    u, v = np.zeros((2, mesh.node_count))
    u[mesh.interior_nodes], v[mesh.interior_nodes] = rng.standard_normal((2, mesh.interior_node_count))
    pu, pv = operator.apply(u), operator.apply(v)
    defect = abs(operator.inner(pu, v) - operator.inner(u, pv))
    scale = np.sqrt(operator.inner(pu, pu) * operator.inner(v, v))
    return float(defect / scale), 1e-10, {"nodes": mesh.node_count}


def check_two_exponentials(config):
    mesh = build_box_mesh(2, [1.0, 1.0], [12, 12])
    times = np.arange(1, 301) * 0.01
    g1 = np.ones(mesh.boundary_nodes.size)
    g2 = 1.0 + mesh.boundary_coordinates[:, 0]
    values = 2.0 * np.outer(np.exp(-3.0 * times), g1) + np.outer(np.exp(-10.0 * times), g2)
    fit = fit_dirichlet_series(FluxTrace(mesh, times, values), mode_budget=4, window=(0.01, 3.0))
    if fit.cluster_count != 2:
        return float("inf"), 1e-6, {"exponents": fit.exponents}
    error = float(np.abs(fit.exponents / np.array([3.0, 10.0]) - 1.0).max())
    return error, 1e-6, {"exponents": fit.exponents}


def check_eigenspace_rotation(config):
    rng = np.random.default_rng(config.seed)
    worst = 0.0
    for _ in range(20):
        inner, boundary = rng.standard_normal((20, 3)), rng.standard_normal((15, 3))
        rotation = linalg.qr(rng.standard_normal((3, 3)))[0]
        match = match_eigenspaces((inner, boundary), (inner @ rotation, boundary @ rotation), 3)
        worst = max(worst, float(np.linalg.norm(match.transform - rotation)), match.orthogonality_defect)
    return worst, 1e-8, {"trials": 20}


def check_boundary_tensor(config):
    tensor = np.array([[2.0, 1.0], [1.0, 1.0]])
    roots = [halfspace_root(tensor, [xi]) for xi in (1.0, 2.0, 3.0)]
    probes = [HalfspaceProbe.from_root([0.0, 0.0], [xi], root) for xi, root in zip((1.0, 2.0, 3.0), roots)]
    estimate = estimate_boundary_tensor(probes)
    root_error = abs(roots[0] - complex(-1.0, 1.0))
    return max(root_error, float(np.abs(estimate.tensor - tensor).max())), 1e-8, {"A_hat": estimate.tensor}


def check_cgo_constant(config):
    mesh = build_box_mesh(3, [1.0, 1.0, 1.0], [4, 4, 4])
    extension = extend_gamma(lambda p: np.full(np.asarray(p).shape[:-1], 2.0), mesh=mesh, grid=12)
    pair = make_phase_pair([1.0, 0.0, 0.0], 10.0)
    solution = solve_remainder(extension, pair.rho1, pair.eta2)
    return float(solution.remainder_norm), 1e-12, {"rho_norm": float(np.linalg.norm(pair.rho1))}


CHECKS: List[Tuple[str, Check]] = [
    ("dtn_equilibrium", check_dtn_equilibrium),
    ("square_spectrum", check_square_spectrum),
    ("torsion", check_torsion),
    ("self_adjointness", check_self_adjointness),
    ("two_exponentials", check_two_exponentials),
    ("eigenspace_rotation", check_eigenspace_rotation),
    ("boundary_tensor", check_boundary_tensor),
    ("cgo_constant", check_cgo_constant),
]


def run_checks(config: ExperimentConfig, checks=None) -> List[CheckResult]:
    results = []
    for name, check in checks or CHECKS:
        try:
            value, threshold, detail = check(config)
            result = CheckResult(name, bool(value <= threshold), float(value), float(threshold), detail)
        except ThermoEitError as e:
            result = CheckResult(name, False, float("inf"), 0.0, {"code": e.code}, str(e))
        level = "INFO" if result.passed else "ERROR"
        logger.log(level, "Verification check", check=name, passed=result.passed, value=result.value,
                   threshold=result.threshold)
        results.append(result)
    return results


def write_report(config: ExperimentConfig, store: ArtifactStore, results: List[CheckResult]) -> str:
    store.setup()
    checks = [asdict(result) for result in results]
    return store.store_json("verify_report", {"config_digest": config.digest,
                                              "passed": all(r.passed for r in results), "checks": checks})
