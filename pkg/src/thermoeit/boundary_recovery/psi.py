"""The interior-source-to-boundary-flux map Ψ and measured decay probing on a slab."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Union

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from src.thermoeit.boundary_recovery.halfspace import HalfspaceProbe
from src.thermoeit.discretization import BoundaryTrace, ScalarField, TensorField
from src.thermoeit.elliptic import WeightedOperator, assemble_P
from src.thermoeit.errors import ConfigError

# fractions of the slab width
WINDOW_MARGIN = 0.0625
WINDOW_TAPER = 0.25
EXTRACTION_HALF_WIDTH = 0.125
MAX_DEPTH_FRACTION = 0.2
BUMP_CELLS = 2
OPPOSITE_FACE_BOUND = 1e-2


def unit_operator(tensor: TensorField) -> WeightedOperator:
    """−∇·(A∇·) with Dirichlet conditions, i.e. P with κ = 1."""
    return assemble_P(ScalarField.constant(tensor.mesh, 1.0, name="unit"), tensor)


def psi_map(tensor: TensorField, source: Union[ScalarField, NDArray],
            operator: Optional[WeightedOperator] = None) -> BoundaryTrace:
    """Ψ(F) = ν·A∇u|∂Ω for −∇·(A∇u) = F, u = 0 on ∂Ω.

    Pass ``operator`` (from ``unit_operator``) to reuse its factorization across sources.
    """
    operator = operator or unit_operator(tensor)
    values = source.values if isinstance(source, ScalarField) else np.asarray(source, dtype=float)
    if values.shape != (tensor.mesh.node_count,):
        raise ConfigError(f"source needs {tensor.mesh.node_count} nodal values, got shape {values.shape}")
    u = operator.solve_inverse(values)
    return BoundaryTrace(tensor.mesh, operator.flux(u, values))


def slab_window(x: NDArray, lower: float, upper: float) -> NDArray:
    """Flat-top window on [lower, upper] with sin² tapers and zero margins at both ends."""
    width = upper - lower
    start = lower + WINDOW_MARGIN * width
    taper = WINDOW_TAPER * width
    rise = np.clip((x - start) / taper, 0.0, 1.0)
    fall = np.clip((upper - WINDOW_MARGIN * width - x) / taper, 0.0, 1.0)
    return np.sin(0.5 * np.pi * np.minimum(rise, fall)) ** 2


def _normal_spacing(coordinates: NDArray) -> float:
    return float(np.diff(np.unique(np.round(coordinates, 12))).min())


class _SlabProbe:
    """Source construction and amplitude extraction on the face {y = lower}."""

    def __init__(self, tensor: TensorField, point: NDArray):
        mesh = tensor.mesh
        if mesh.dimension != 2 or mesh.shape != "box":
            raise ConfigError("decay probing is implemented for 2D slabs")
        lower, upper = mesh.bounds
        self.mesh, self.tensor, self.point = mesh, tensor, point
        self.width, self.thickness = float(upper[0] - lower[0]), float(upper[1] - lower[1])
        self.face = float(lower[1])
        if abs(point[1] - self.face) > 1e-9 * mesh.diameter:
            raise ConfigError(f"probe point {point.tolist()} is not on the face y = {self.face}")
        half = EXTRACTION_HALF_WIDTH * self.width
        flat = (lower[0] + (WINDOW_MARGIN + WINDOW_TAPER) * self.width,
                upper[0] - (WINDOW_MARGIN + WINDOW_TAPER) * self.width)
        if point[0] - half < flat[0] or point[0] + half > flat[1]:
            raise ConfigError(f"probe point x = {point[0]:.4g} is too close to the slab ends")
        self.bump_width = BUMP_CELLS * _normal_spacing(mesh.nodes[:, 1])

        coordinates = mesh.boundary_coordinates
        on_face = (np.abs(coordinates[:, 1] - self.face) <= 1e-9 * mesh.diameter) \
            & (np.abs(coordinates[:, 0] - point[0]) <= half)
        self.extraction = np.flatnonzero(on_face)
        self.window = slab_window(mesh.nodes[:, 0], float(lower[0]), float(upper[0]))
        self.operator = unit_operator(tensor)

    def source(self, frequency: float, depth: float) -> NDArray:
        x, y = self.mesh.nodes[:, 0], self.mesh.nodes[:, 1] - self.face
        bump = np.maximum(0.0, 1.0 - np.abs(y - depth) / self.bump_width) / self.bump_width
        return np.cos(frequency * (x - self.point[0])) * self.window * bump

    def amplitude(self, frequency: float, depth: float) -> complex:
        """Complex a with flux ≈ Re(a e^{iξ(x − x₀)}) on the central part of the face."""
        flux = psi_map(self.tensor, self.source(frequency, depth), self.operator).values[self.extraction]
        shifted = self.mesh.boundary_coordinates[self.extraction, 0] - self.point[0]
        design = np.stack([np.cos(frequency * shifted), -np.sin(frequency * shifted)], axis=1)
        (real, imag), *_ = np.linalg.lstsq(design, flux, rcond=None)
        return complex(real, imag)


def probe_boundary_decay(tensor: TensorField, point, frequencies: Sequence, depths: Sequence[float],
                         threads: int = 1) -> List[HalfspaceProbe]:
    """Measured decay probes at x₀ on the bottom face of a 2D slab, one per frequency.

    Each source is cos(ξ′(x − x₀))·W(x)·bump(y − d) with W a flat-top window;
    the flux amplitude at ξ′ is read on the flat central part of the face and the
    amplitudes over depth are fitted to C·e^{κd}.
    """
    point = np.asarray(point, dtype=float)
    depths = np.asarray(depths, dtype=float)
    frequencies = [float(np.ravel(xi)[0]) for xi in frequencies]
    if not frequencies or any(xi == 0 for xi in frequencies):
        raise ConfigError("decay probing needs nonzero tangential frequencies")
    slab = _SlabProbe(tensor, point)
    if depths.size < 2 or np.any(np.diff(depths) <= 0):
        raise ConfigError("probe depths must be at least two and strictly increasing")
    if depths[0] <= slab.bump_width or depths[-1] > MAX_DEPTH_FRACTION * slab.thickness:
        raise ConfigError(f"depths must lie in ({slab.bump_width:.4g}, "
                          f"{MAX_DEPTH_FRACTION * slab.thickness:.4g}] for this slab")
    for xi in frequencies:
        bound = float(np.exp(-abs(xi) * slab.thickness))
        if bound > OPPOSITE_FACE_BOUND:
            logger.warning("Opposite face may perturb the half-space response", frequency=xi, bound=bound)

    requests = [(xi, d) for xi in frequencies for d in depths]

    def run(request):
        return slab.amplitude(*request)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        amplitudes = np.asarray(list(executor.map(run, requests))).reshape(len(frequencies), depths.size)

    probes = [HalfspaceProbe.fit(point, [xi], depths, row) for xi, row in zip(frequencies, amplitudes)]
    logger.info("Probed boundary decay", point=point.tolist(), frequencies=frequencies,
                decay_rates=[p.decay_rate for p in probes])
    return probes
