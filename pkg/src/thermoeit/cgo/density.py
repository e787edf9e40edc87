"""Product identity and density of products γ∇w₁·∇w₂ of conductivity solutions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import linalg

from src.thermoeit.cgo.phases import make_phase_pair
from src.thermoeit.cgo.remainder import extend_gamma, shifted_wavevectors, solve_remainder
from src.thermoeit.discretization import BoundaryTrace, Mesh, ScalarField
from src.thermoeit.elliptic import ConductivitySolver
from src.thermoeit.errors import ConfigError, RankDeficiencyError

RANK_RTOL = 1e-8
PROBE_SEED = 11


def _nodal(values) -> NDArray:
    return values.values if isinstance(values, ScalarField) else np.asarray(values)


def _element_gradient(mesh: Mesh, values: NDArray) -> NDArray:
    gradient = np.einsum("ei,eid->ed", values[mesh.elements], mesh.element_gradients)
    # gradients of nodal constants are rounding noise; zero them
    floor = 1e-12 * max(float(np.abs(values).max(initial=0.0)), 1e-300) / mesh.diameter
    gradient[np.abs(gradient) < floor] = 0
    return gradient


def _test_box(mesh: Mesh) -> Tuple[NDArray, NDArray]:
    if mesh.shape == "disk":
        center = 0.5 * (mesh.bounds[0] + mesh.bounds[1])
        half = mesh.radius / np.sqrt(2.0)
        return center - half, center + half
    return mesh.bounds[0], mesh.bounds[1]


def default_test_functions(mesh: Mesh) -> List[NDArray]:
    """sin² bumps vanishing to second order on a box inside Ω, times 1 and the centred coordinates."""
    lower, upper = _test_box(mesh)
    scaled = (mesh.nodes - lower) / (upper - lower)
    inside = np.all((scaled >= 0) & (scaled <= 1), axis=1)
    bump = np.where(inside, np.prod(np.sin(np.pi * np.clip(scaled, 0, 1)) ** 2, axis=1), 0.0)
    tests = [bump]
    for d in range(mesh.dimension):
        tests.append(bump * (scaled[:, d] - 0.5))
    # second bump family with two lobes per axis
    lobes = np.where(inside, np.prod(np.sin(2 * np.pi * np.clip(scaled, 0, 1)) ** 2, axis=1), 0.0)
    tests.append(lobes)
    return tests


def product_identity_check(gamma: ScalarField, w1, w2, tests: Optional[Sequence[NDArray]] = None) -> float:
    """Largest weak-form gap between ∫φγ∇w₁·∇w₂ and −½∫γ∇φ·∇(w₁w₂) over the tests.

    Each gap is scaled by ∫|φ|γ|∇w₁||∇w₂|; a test with zero scale contributes its raw gap.
    """
    mesh = gamma.mesh
    w1, w2 = _nodal(w1), _nodal(w2)
    tests = default_test_functions(mesh) if tests is None else [_nodal(t) for t in tests]
    volumes = mesh.element_volumes
    gamma_e = gamma.element_means()
    grad1, grad2 = _element_gradient(mesh, w1), _element_gradient(mesh, w2)
    grad_product = _element_gradient(mesh, w1 * w2)
    worst = 0.0
    for phi in tests:
        phi_e = phi[mesh.elements].mean(axis=1)
        grad_phi = _element_gradient(mesh, phi)
        lhs = np.sum(volumes * gamma_e * phi_e * np.einsum("ed,ed->e", grad1, grad2))
        rhs = -0.5 * np.sum(volumes * gamma_e * np.einsum("ed,ed->e", grad_phi, grad_product))
        scale = np.sum(volumes * gamma_e * np.abs(phi_e)
                       * np.linalg.norm(grad1, axis=1) * np.linalg.norm(grad2, axis=1))
        gap = abs(lhs - rhs)
        worst = max(worst, float(gap / scale if scale > 0 else gap))
    logger.debug("Checked product identity", tests=len(tests), discrepancy=worst)
    return worst


def cosine_basis(lower: NDArray, upper: NDArray, count: int) -> Callable[[NDArray], NDArray]:
    """First ``count`` tensor cosines on the box, ordered by total degree."""
    dimension = lower.size
    grid = np.stack(np.meshgrid(*([np.arange(count)] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
    order = np.lexsort(tuple(grid[:, d] for d in reversed(range(dimension))) + (grid.sum(axis=1),))
    indices = grid[order][:count]

    def evaluate(points: NDArray) -> NDArray:
        scaled = (np.asarray(points) - lower) / (upper - lower)
        return np.stack([np.prod(np.cos(np.pi * idx * scaled), axis=-1) for idx in indices], axis=-1)

    return evaluate


@dataclass(frozen=True)
class DensityReport:
    rank: int
    basis_dim: int
    probe_count: int
    singular_values: NDArray[np.float64]
    method: str

    @property
    def full_rank(self) -> bool:
        return self.rank == self.basis_dim

    def to_json(self) -> dict:
        return {"rank": self.rank, "basis_dim": self.basis_dim, "probe_count": self.probe_count,
                "singular_values": self.singular_values.tolist(), "method": self.method,
                "full_rank": self.full_rank}


def harmonic_exponential_probes(gamma: ScalarField, count: int, seed: int = PROBE_SEED) -> List[Tuple[NDArray, NDArray]]:
    """Pairs of solutions with boundary values e^{ζ·x}, ζ·ζ = 0, on a 2D domain."""
    mesh = gamma.mesh
    rng = np.random.default_rng(seed)
    solver = ConductivitySolver(gamma)
    center = 0.5 * (mesh.bounds[0] + mesh.bounds[1])
    scale = 1.0 / max(float(np.max(mesh.bounds[1] - mesh.bounds[0])), 1e-12)
    x = mesh.boundary_coordinates - center

    def solution(angle: float, magnitude: float, orientation: int) -> NDArray:
        # ζ = a e^{iθ}(1, ±i); the two orientations give holomorphic and antiholomorphic data
        zeta = magnitude * scale * np.exp(1j * angle) * np.array([1.0, orientation * 1j])
        return solver.solve(BoundaryTrace(mesh, np.exp(x @ zeta)))

    pairs = []
    for _ in range(count):
        angles = rng.uniform(0.0, 2 * np.pi, 2)
        magnitudes = rng.uniform(0.5, 4.0, 2)
        pairs.append((solution(angles[0], magnitudes[0], 1), solution(angles[1], magnitudes[1], -1)))
    return pairs


def _grid_products(gamma: ScalarField, count: int, magnitude: float, grid: int,
                   seed: int) -> Tuple[List[NDArray], NDArray, NDArray]:
    extension = extend_gamma(gamma, grid=grid)
    box = extension.box
    mask = box.domain_mask(gamma.mesh)
    rng = np.random.default_rng(seed)
    width = float(np.max(gamma.mesh.bounds[1] - gamma.mesh.bounds[0]))
    products = []
    for _ in range(count):
        xi = rng.uniform(-2 * np.pi, 2 * np.pi, 3) / width
        _, wavevectors = shifted_wavevectors(box, make_phase_pair(xi, magnitude).eta2)
        pair = make_phase_pair(xi, magnitude, wavevectors=wavevectors)
        first = solve_remainder(extension, pair.rho1, pair.eta2)
        second = solve_remainder(extension, pair.rho2, pair.eta2)
        density = extension.values * np.exp(1j * box.points @ xi) * np.einsum(
            "...d,...d->...", first.phase_gradient(), second.phase_gradient())
        products.append(density[mask])
    return products, box.points[mask], np.full(int(mask.sum()), box.cell_volume)


def density_gram_test(gamma: ScalarField, probe_count: int, basis_dim: int,
                      pairs: Optional[Sequence[Tuple[NDArray, NDArray]]] = None, magnitude: float = 20.0,
                      grid: int = 24, seed: int = PROBE_SEED, raise_on_deficiency: bool = False) -> DensityReport:
    """Numerical rank of the products γ∇w₁·∇w₂ projected on ``basis_dim`` cosines.

    Probes are the given ``pairs`` (nodal solutions) or, by default, harmonic
    exponentials in 2D and CGO solutions in 3D.
    """
    mesh = gamma.mesh
    if pairs is not None:
        probe_count = len(pairs)
    if basis_dim < 1 or basis_dim > probe_count:
        raise ConfigError(f"basis_dim must be in [1, probe_count], got {basis_dim} with {probe_count} probes")
    lower, upper = mesh.bounds
    basis = cosine_basis(lower, upper, basis_dim)

    if pairs is None and mesh.dimension == 3:
        method = "cgo"
        products, points, weights = _grid_products(gamma, probe_count, magnitude, grid, seed)
        values = basis(points)
        gram = np.array([(weights * product) @ values for product in products])
    else:
        method = "explicit" if pairs is not None else "harmonic_exponential"
        if pairs is None:
            pairs = harmonic_exponential_probes(gamma, probe_count, seed)
        centroids = mesh.nodes[mesh.elements].mean(axis=1)
        values = basis(centroids) * (mesh.element_volumes * gamma.element_means())[:, None]
        gram = np.array([
            np.einsum("ed,ed->e", _element_gradient(mesh, _nodal(w1)), _element_gradient(mesh, _nodal(w2))) @ values
            for w1, w2 in pairs])

    singular_values = linalg.svd(gram, compute_uv=False)
    threshold = RANK_RTOL * singular_values[0] if singular_values.size and singular_values[0] > 0 else np.inf
    rank = int(np.sum(singular_values > threshold))
    report = DensityReport(rank, basis_dim, probe_count, singular_values, method)
    logger.info("Density Gram test", rank=rank, basis_dim=basis_dim, probes=probe_count, method=method)
    if not report.full_rank:
        logger.warning("Products do not span the test basis", rank=rank, basis_dim=basis_dim,
                       singular_values=singular_values.tolist())
        if raise_on_deficiency:
            raise RankDeficiencyError(f"rank {rank} below basis dimension {basis_dim}", singular_values)
    return report
