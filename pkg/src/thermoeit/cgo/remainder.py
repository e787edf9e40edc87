"""CGO remainder r_ρ on a periodic box.

The conductivity equation for w = e^{iρ·x} γ^{−1/2}(1 + r) reduces to
``(Δ + 2iρ·∇) r = q (1 + r)`` with ``q = γ^{−1/2} Δ γ^{1/2}``. The remainder is
written as r = e^{iκ₀·x} p with κ₀ = (π/L) η₂, so that p is periodic on the box and
the symbol of the shifted operator never vanishes on the lattice.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Optional, Union

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import fft
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

from src.thermoeit.cgo.phases import lattice_symbol
from src.thermoeit.discretization import Mesh, ScalarField
from src.thermoeit.errors import ConfigError, InvalidCoefficientError, NonContractionError

MAX_ITERATIONS = 200
ITERATION_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class PeriodicBox:
    """Cube of side ``side`` centred on ``center`` sampled by ``grid`` points per axis."""

    center: NDArray[np.float64]
    side: float
    grid: int

    @property
    def dimension(self) -> int:
        return self.center.size

    @property
    def spacing(self) -> float:
        return self.side / self.grid

    @cached_property
    def axes(self):
        return [c - self.side / 2 + self.spacing * np.arange(self.grid) for c in self.center]

    @cached_property
    def points(self) -> NDArray[np.float64]:
        """Grid points with shape (grid, …, grid, n)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @cached_property
    def wavenumbers(self) -> NDArray[np.float64]:
        """Lattice wavevectors with shape (grid, …, grid, n)."""
        k = 2 * np.pi * fft.fftfreq(self.grid, d=self.spacing)
        return np.stack(np.meshgrid(*([k] * self.dimension), indexing="ij"), axis=-1)

    def laplacian(self, values: NDArray) -> NDArray:
        k2 = np.sum(self.wavenumbers ** 2, axis=-1)
        return fft.ifftn(-k2 * fft.fftn(values))

    def gradient(self, values: NDArray, shift: Optional[NDArray] = None) -> NDArray:
        """Spectral gradient; with ``shift`` s it returns e^{-is·x}∇(e^{is·x} values)."""
        k = self.wavenumbers if shift is None else self.wavenumbers + shift
        transformed = fft.fftn(values)
        return np.stack([fft.ifftn(1j * k[..., d] * transformed) for d in range(self.dimension)], axis=-1)

    def divergence(self, values: NDArray, shift: Optional[NDArray] = None) -> NDArray:
        k = self.wavenumbers if shift is None else self.wavenumbers + shift
        return sum(fft.ifftn(1j * k[..., d] * fft.fftn(values[..., d])) for d in range(self.dimension))

    def domain_mask(self, mesh: Mesh) -> NDArray[np.bool_]:
        return mesh.distance_to_domain(self.points.reshape(-1, self.dimension)).reshape(self.points.shape[:-1]) == 0

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dimension


@dataclass(frozen=True, eq=False)
class ExtendedCoefficient:
    """γ extended from Ω̄ to ℝⁿ: c + χ(dist)(γ(π(x)) − c), constant c outside the collar."""

    mesh: Mesh
    interior: Callable[[NDArray], NDArray]
    constant: float
    collar: float
    box: PeriodicBox

    def __call__(self, points: NDArray) -> NDArray:
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, self.mesh.dimension)
        distance = self.mesh.distance_to_domain(flat)
        blend = 1.0 - _smoothstep(distance / self.collar)
        values = self.constant + blend * (self.interior(self.mesh.project_to_domain(flat)) - self.constant)
        return values.reshape(points.shape[:-1])

    @cached_property
    def values(self) -> NDArray[np.float64]:
        return self(self.box.points)

    def on_box(self, box: PeriodicBox) -> NDArray[np.float64]:
        return self.values if box is self.box else self(box.points)


def _smoothstep(s: NDArray) -> NDArray:
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def _field_sampler(gamma: ScalarField) -> Callable[[NDArray], NDArray]:
    linear = LinearNDInterpolator(gamma.mesh.nodes, gamma.values)
    nearest = NearestNDInterpolator(gamma.mesh.nodes, gamma.values)

    def sample(points: NDArray) -> NDArray:
        values = linear(points)
        missing = np.isnan(values)
        if np.any(missing):
            values[missing] = nearest(points[missing])
        return values

    return sample


def extend_gamma(gamma: Union[ScalarField, Callable[[NDArray], NDArray]], box_scale: float = 2.0,
                 grid: int = 32, mesh: Optional[Mesh] = None) -> ExtendedCoefficient:
    """Extend γ to a periodic box ``box_scale`` domain diameters wide.

    ``gamma`` is a nodal field or a callable on points; a callable needs ``mesh`` for
    the domain geometry.
    """
    if isinstance(gamma, ScalarField):
        mesh = gamma.mesh
        sampler = _field_sampler(gamma)
        boundary_values = gamma.boundary_values
    else:
        if mesh is None:
            raise ConfigError("a callable gamma needs the domain mesh")
        sampler = lambda points: np.asarray(gamma(points), dtype=float)
        boundary_values = sampler(mesh.boundary_coordinates)
    center = 0.5 * (mesh.bounds[0] + mesh.bounds[1])
    side = box_scale * mesh.diameter
    margin = side / 2 - 0.5 * float(np.max(mesh.bounds[1] - mesh.bounds[0]))
    if margin <= 0:
        raise ConfigError(f"box side {side:.4g} does not contain the domain; increase box_scale")
    minimum = float(sampler(mesh.nodes).min())
    if minimum <= 0:
        raise InvalidCoefficientError(f"gamma must be positive on the domain, min is {minimum:.6g}")
    constant = float(np.mean(boundary_values))
    box = PeriodicBox(center, side, grid)
    # the blend must finish well inside the box so the extension is periodic
    return ExtendedCoefficient(mesh, sampler, constant, 0.5 * margin, box)


@dataclass(frozen=True, eq=False)
class CgoSolution:
    """Remainder r = e^{iκ₀·x} p on ``box`` for the phase ``rho``."""

    rho: NDArray[np.complex128]
    shift: NDArray[np.float64]
    box: PeriodicBox
    gamma_values: NDArray[np.float64]
    periodic_part: NDArray[np.complex128]
    remainder_norm: float
    residual: float
    iterations: int
    report: Dict[str, float] = field(default_factory=dict)

    @cached_property
    def remainder(self) -> NDArray[np.complex128]:
        return np.exp(1j * self.box.points @ self.shift) * self.periodic_part

    @cached_property
    def amplitude(self) -> NDArray[np.complex128]:
        """g = γ^{−1/2}(1 + r), so that w = e^{iρ·x} g."""
        return (1.0 + self.remainder) / np.sqrt(self.gamma_values)

    @cached_property
    def amplitude_gradient(self) -> NDArray[np.complex128]:
        phase = np.exp(1j * self.box.points @ self.shift)
        grad_r = phase[..., None] * self.box.gradient(self.periodic_part, self.shift)
        inv_sqrt = 1.0 / np.sqrt(self.gamma_values)
        grad_inv_sqrt = self.box.gradient(inv_sqrt).real
        return grad_inv_sqrt * (1.0 + self.remainder)[..., None] + inv_sqrt[..., None] * grad_r

    def phase_gradient(self) -> NDArray[np.complex128]:
        """A with ∇w = e^{iρ·x} A."""
        return 1j * self.rho * self.amplitude[..., None] + self.amplitude_gradient

    def _weighted_laplacian(self, values: NDArray, shift: Optional[NDArray]) -> NDArray:
        # (∇ + iρ)·γ(∇ + iρ) applied to e^{is·x} values, with the phase factored out
        grad = self.box.gradient(values, shift) + 1j * self.rho * values[..., None]
        flux = self.gamma_values[..., None] * grad
        return self.box.divergence(flux, shift) + 1j * np.einsum("...d,d->...", flux, self.rho)

    def conductivity_residual(self) -> float:
        """‖∇·γ∇w_ρ‖ relative to ‖γ^{1/2} q (1 + r)‖, evaluated directly on the box grid."""
        inv_sqrt = 1.0 / np.sqrt(self.gamma_values)
        phase = np.exp(1j * self.box.points @ self.shift)
        residual = self._weighted_laplacian(inv_sqrt.astype(complex), None) \
            + phase * self._weighted_laplacian(inv_sqrt * self.periodic_part, self.shift)
        scale = np.linalg.norm(np.sqrt(self.gamma_values) * potential(self.box, self.gamma_values)
                               * (1.0 + self.remainder))
        if scale == 0:
            return float(np.linalg.norm(residual))
        return float(np.linalg.norm(residual) / scale)


def potential(box: PeriodicBox, gamma_values: NDArray) -> NDArray[np.float64]:
    """q = γ^{−1/2} Δ γ^{1/2}, exactly zero for constant γ."""
    if np.ptp(gamma_values) == 0:
        return np.zeros_like(gamma_values)
    root = np.sqrt(gamma_values)
    return box.laplacian(root).real / root


def shifted_wavevectors(box: PeriodicBox, eta2: NDArray) -> tuple:
    shift = (np.pi / box.side) * np.asarray(eta2, dtype=float)
    return shift, box.wavenumbers + shift


def solve_remainder(extension: ExtendedCoefficient, rho: NDArray[np.complex128], eta2: NDArray,
                    grid: Optional[int] = None, tolerance: float = ITERATION_TOLERANCE,
                    max_iterations: int = MAX_ITERATIONS) -> CgoSolution:
    """Fixed point p ← σ⁻¹ F[q (e^{−iκ₀·x} + p)] for the periodic part of r_ρ."""
    box = extension.box if grid in (None, extension.box.grid) else PeriodicBox(extension.box.center,
                                                                              extension.box.side, grid)
    rho = np.asarray(rho, dtype=complex)
    gamma_values = extension.on_box(box)
    q = potential(box, gamma_values)
    shift, wavevectors = shifted_wavevectors(box, eta2)
    symbol = lattice_symbol(rho, wavevectors)
    if np.abs(symbol).min() == 0:
        raise NonContractionError("symbol vanishes on the shifted lattice")
    q_norm = float(np.abs(q).max())
    report = {"rho_norm": float(np.linalg.norm(rho)), "q_sup": q_norm,
              "contraction_heuristic": bool(np.linalg.norm(rho) >= 2 * q_norm)}
    mask = box.domain_mask(extension.mesh)

    p = np.zeros(q.shape, dtype=complex)
    iterations, residual = 0, 0.0
    if q_norm > 0:
        forcing = q * np.exp(-1j * box.points @ shift)
        previous_step = np.inf
        growth = 0
        for iterations in range(1, max_iterations + 1):
            update = fft.ifftn(fft.fftn(forcing + q * p) / symbol)
            step = np.linalg.norm(update - p) / max(np.linalg.norm(update), 1e-300)
            p = update
            if step <= tolerance:
                break
            growth = growth + 1 if step > previous_step else 0
            previous_step = step
            if growth >= 3 or not np.isfinite(step):
                logger.error("CGO fixed point diverges", **report, iteration=iterations, step=step)
                raise NonContractionError(
                    f"fixed point not contracting at |rho|={report['rho_norm']:.4g} (sup q={q_norm:.4g})")
        else:
            raise NonContractionError(f"no convergence in {max_iterations} iterations (last step {step:.3e})")
        lhs = fft.ifftn(symbol * fft.fftn(p))
        rhs = forcing + q * p
        residual = float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))

    remainder_norm = float(np.sqrt(np.sum(np.abs(p[mask]) ** 2) * box.cell_volume))
    logger.debug("Solved CGO remainder", iterations=iterations, remainder_norm=remainder_norm, residual=residual,
                 **report)
    return CgoSolution(rho, shift, box, gamma_values, p, remainder_norm, residual, iterations, report)
