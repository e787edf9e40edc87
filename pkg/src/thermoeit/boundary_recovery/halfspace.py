"""Constant-coefficient half-space symbol roots and boundary tensor recovery.

The probed face is {x_n = 0} with x_n the inward normal coordinate, taken as the
last Cartesian axis. Solutions of ∇·(A∇u) = 0 of the form e^{iξ′·x′ + iλx_n}
decay into the body for the root λ₊ with Im λ₊ > 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import linalg

from src.thermoeit.errors import ConfigError, InvalidCoefficientError, TensorFitError

DECAY_RESIDUAL_THRESHOLD = 1e-2
TENSOR_RESIDUAL_THRESHOLD = 0.1


def _as_tensor(matrix) -> NDArray[np.float64]:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] not in (2, 3):
        raise ConfigError(f"expected a 2x2 or 3x3 matrix, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-12 * max(1.0, np.abs(matrix).max())):
        raise InvalidCoefficientError("boundary tensor must be symmetric")
    smallest = float(np.linalg.eigvalsh(matrix).min())
    if smallest <= 0:
        raise InvalidCoefficientError(f"boundary tensor is not positive definite (min eigenvalue {smallest:.6g})")
    return matrix


def _as_frequency(frequency, dimension: int) -> NDArray[np.float64]:
    frequency = np.atleast_1d(np.asarray(frequency, dtype=float))
    if frequency.shape != (dimension - 1,):
        raise ConfigError(f"tangential frequency needs {dimension - 1} components, got {frequency.shape}")
    if not np.any(frequency):
        raise ConfigError("tangential frequency must be nonzero")
    return frequency


def halfspace_root(tensor, frequency) -> complex:
    """λ₊ of a_nn λ² + 2(Σ a_nα ξ_α)λ + Σ a_αβ ξ_α ξ_β = 0; λ₋ is its conjugate."""
    tensor = _as_tensor(tensor)
    frequency = _as_frequency(frequency, tensor.shape[0])
    a_nn = tensor[-1, -1]
    b = float(tensor[-1, :-1] @ frequency)
    c = float(frequency @ tensor[:-1, :-1] @ frequency)
    # a_nn c − b² > 0 is the Schur complement of a positive definite matrix
    return complex(-b / a_nn, np.sqrt(a_nn * c - b * b) / a_nn)


@dataclass(frozen=True)
class HalfspaceProbe:
    """Flux amplitudes at frequency ξ′ for sources at increasing depths below x₀.

    The amplitudes follow C·e^{κd}; the fitted root is λ̂₊ = −i·conj(κ), i.e.
    ``decay_rate = Im λ̂₊ = −Re κ`` and ``oscillation_rate = Re λ̂₊ = −Im κ``.
    """

    point: NDArray[np.float64]
    frequency: NDArray[np.float64]
    depths: NDArray[np.float64]
    amplitudes: NDArray[np.complex128]
    decay_rate: float
    oscillation_rate: float
    residual: float = 0.0

    @property
    def root(self) -> complex:
        return complex(self.oscillation_rate, self.decay_rate)

    @classmethod
    def from_root(cls, point, frequency, root: complex) -> "HalfspaceProbe":
        """Probe carrying a known root and no depth samples."""
        return cls(np.asarray(point, dtype=float), np.atleast_1d(np.asarray(frequency, dtype=float)),
                   np.zeros(0), np.zeros(0, dtype=complex), float(root.imag), float(root.real))

    @classmethod
    def fit(cls, point, frequency, depths, amplitudes) -> "HalfspaceProbe":
        """Log-linear fit of C·e^{κd} with the phase unwrapped along depth."""
        depths = np.asarray(depths, dtype=float)
        amplitudes = np.asarray(amplitudes, dtype=complex)
        if depths.size < 2 or depths.shape != amplitudes.shape:
            raise ConfigError("decay fit needs at least two depths with one amplitude each")
        if np.any(np.diff(depths) <= 0):
            raise ConfigError("probe depths must be strictly increasing")
        if np.any(amplitudes == 0):
            raise TensorFitError("zero flux amplitude; source too deep for the mesh resolution")

        design = np.stack([np.ones_like(depths), depths], axis=1)
        log_modulus = np.log(np.abs(amplitudes))
        phase = np.unwrap(np.angle(amplitudes))
        (log_c, real_rate), *_ = np.linalg.lstsq(design, log_modulus, rcond=None)
        (phase_c, imag_rate), *_ = np.linalg.lstsq(design, phase, rcond=None)
        model = np.exp(log_c + 1j * phase_c + (real_rate + 1j * imag_rate) * depths)
        residual = float(np.linalg.norm(model - amplitudes) / np.linalg.norm(amplitudes))

        if real_rate >= 0:
            logger.error("Flux amplitude does not decay with depth", frequency=np.asarray(frequency).tolist(),
                         rate=float(real_rate))
            raise TensorFitError(f"fitted decay rate {-real_rate:.4g} is not positive")
        if residual > DECAY_RESIDUAL_THRESHOLD:
            logger.warning("Decay fit residual above threshold; depths may exceed the leading-term range",
                           residual=residual, frequency=np.asarray(frequency).tolist())
        return cls(np.asarray(point, dtype=float), np.atleast_1d(np.asarray(frequency, dtype=float)),
                   depths, amplitudes, float(-real_rate), float(-imag_rate), residual)

    def to_rows(self) -> List[list]:
        """CSV rows: frequency components, depth, Re and Im of the amplitude."""
        return [[*self.frequency.tolist(), float(d), float(a.real), float(a.imag)]
                for d, a in zip(self.depths, self.amplitudes)]

    def to_json(self) -> dict:
        return {"point": self.point.tolist(), "frequency": self.frequency.tolist(),
                "decay_rate": self.decay_rate, "oscillation_rate": self.oscillation_rate,
                "residual": self.residual}


@dataclass(frozen=True)
class BoundaryTensorEstimate:
    point: NDArray[np.float64]
    tensor: NDArray[np.float64]
    residual: float
    frequencies: List[List[float]] = field(default_factory=list)

    @property
    def positive_definite(self) -> bool:
        return bool(np.linalg.eigvalsh(self.tensor).min() > 0)

    def to_json(self) -> dict:
        return {"x0": self.point.tolist(), "A_hat": self.tensor.tolist(), "residual": self.residual,
                "frequencies": self.frequencies}


def _unknown_pairs(dimension: int):
    tangential = dimension - 1
    upper = [(a, b) for a in range(tangential) for b in range(a, tangential)]
    return tangential, upper


def estimate_boundary_tensor(probes: Sequence[HalfspaceProbe], normal_coefficient: float = 1.0,
                             threshold: float = TENSOR_RESIDUAL_THRESHOLD) -> BoundaryTensorEstimate:
    """Least-squares Â from the quadratic root relation over measured (ξ′, λ̂₊) pairs.

    Boundary fluxes are unchanged by A ↦ cA, so the normal entry a_nn is an input
    (``normal_coefficient``) and the remaining entries are linear in the data.
    Each probe contributes the real and imaginary parts of the relation.
    """
    if not probes:
        raise TensorFitError("no probes to fit a boundary tensor from")
    if normal_coefficient <= 0:
        raise ConfigError(f"normal coefficient must be positive, got {normal_coefficient}")
    dimension = probes[0].frequency.size + 1
    if any(p.frequency.size != dimension - 1 for p in probes):
        raise ConfigError("probes mix tangential dimensions")
    tangential, upper = _unknown_pairs(dimension)
    unknowns = tangential + len(upper)

    rows, rhs = [], []
    for probe in probes:
        xi, root = probe.frequency, probe.root
        # a_nn λ² + 2λ Σ a_nα ξ_α + Σ_{α≤β} (2 − δ_αβ) a_αβ ξ_α ξ_β = 0
        coefficients = np.concatenate([2.0 * root * xi,
                                       [(1.0 if a == b else 2.0) * xi[a] * xi[b] for a, b in upper]])
        target = -normal_coefficient * root * root
        rows.extend([coefficients.real, coefficients.imag])
        rhs.extend([target.real, target.imag])
    design, rhs = np.asarray(rows, dtype=float), np.asarray(rhs, dtype=float)

    solution, _, rank, singular_values = linalg.lstsq(design, rhs)
    if rank < unknowns:
        logger.error("Boundary tensor fit is under-determined", probes=len(probes), rank=int(rank),
                     unknowns=unknowns)
        raise TensorFitError(f"{len(probes)} probes give rank {rank} for {unknowns} unknown tensor entries")
    residual = float(np.linalg.norm(design @ solution - rhs) / max(np.linalg.norm(rhs), 1e-300))

    tensor = np.zeros((dimension, dimension))
    tensor[-1, -1] = normal_coefficient
    tensor[-1, :-1] = tensor[:-1, -1] = solution[:tangential]
    for value, (a, b) in zip(solution[tangential:], upper):
        tensor[a, b] = tensor[b, a] = value

    estimate = BoundaryTensorEstimate(np.asarray(probes[0].point, dtype=float), tensor, residual,
                                      [p.frequency.tolist() for p in probes])
    if residual > threshold:
        logger.error("Probes are inconsistent with a constant boundary tensor", residual=residual)
        raise TensorFitError(f"tensor fit residual {residual:.3g} above {threshold:.3g}")
    if not estimate.positive_definite:
        raise TensorFitError("fitted boundary tensor is not positive definite")
    logger.info("Estimated boundary tensor", tensor=tensor.tolist(), residual=residual, probes=len(probes))
    return estimate
