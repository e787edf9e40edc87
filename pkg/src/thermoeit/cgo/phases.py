"""Complex phase pairs ρ₁ + ρ₂ = ξ with ρ_j·ρ_j = 0."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from src.thermoeit.errors import ConfigError, LatticeCollisionError

PHASE_TOLERANCE = 1e-12
# relative increases of t tried in order when a lattice mode hits the symbol zero set;
# increases keep |ρ| above the requested magnitude
PERTURBATION_SCHEDULE = (0.0, 0.0025, 0.005, 0.0075, 0.01)


@dataclass(frozen=True)
class CgoPhasePair:
    xi: NDArray[np.float64]
    rho1: NDArray[np.complex128]
    rho2: NDArray[np.complex128]
    magnitude: float
    t: float
    eta1: NDArray[np.float64]
    eta2: NDArray[np.float64]

    @property
    def s(self) -> float:
        return float(np.sqrt(np.dot(self.xi, self.xi) / 4.0 + self.t ** 2))

    def defects(self) -> dict:
        return {
            "rho1_null": abs(self.rho1 @ self.rho1),
            "rho2_null": abs(self.rho2 @ self.rho2),
            "sum": float(np.abs(self.rho1 + self.rho2 - self.xi).max()),
        }


def _orthonormal_directions(xi: NDArray) -> tuple:
    unit = xi / np.linalg.norm(xi)
    axes = [k for k in range(3) if abs(xi[k]) <= PHASE_TOLERANCE * np.linalg.norm(xi)]
    if axes:
        eta2 = np.eye(3)[axes[-1]]
    else:
        candidates = [unit] + list(np.eye(3))
        basis = []
        for v in candidates:
            w = v - sum((v @ b) * b for b in basis)
            if np.linalg.norm(w) > 1e-8:
                basis.append(w / np.linalg.norm(w))
        eta2 = basis[2]
    eta1 = np.cross(eta2, unit)
    return eta1 / np.linalg.norm(eta1), eta2


def _pair(xi: NDArray, t: float) -> CgoPhasePair:
    eta1, eta2 = _orthonormal_directions(xi)
    s = np.sqrt(xi @ xi / 4.0 + t ** 2)
    rho1 = xi / 2.0 + t * eta1 + 1j * s * eta2
    rho2 = xi / 2.0 - t * eta1 - 1j * s * eta2
    return CgoPhasePair(xi, rho1, rho2, float(np.linalg.norm(rho1)), float(t), eta1, eta2)


def lattice_symbol(rho: NDArray[np.complex128], wavevectors: NDArray[np.float64]) -> NDArray[np.complex128]:
    """Symbol of Δ + 2iρ·∇ at the shifted wavevectors k′ (∇ ↦ ik′)."""
    return -np.einsum("...d,...d->...", wavevectors, wavevectors) - 2.0 * (wavevectors @ rho)


def make_phase_pair(xi: Sequence[float], magnitude: float, t: Optional[float] = None,
                    wavevectors: Optional[NDArray] = None, clearance: float = 1e-8) -> CgoPhasePair:
    """Phase pair with |ρ₁| ≥ ``magnitude``.

    ``t`` defaults to the smallest value reaching the magnitude. When the lattice
    ``wavevectors`` are given, t is perturbed along a fixed schedule until the
    symbol stays away from zero on every mode.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (3,):
        raise ConfigError(f"phase pairs need n = 3, got a vector of length {xi.size}")
    if not np.any(xi):
        raise ConfigError("xi must be non-zero")
    if magnitude <= 0:
        raise ConfigError(f"magnitude must be positive, got {magnitude}")
    if t is None:
        # nudged up so rounding never leaves |ρ| just below the magnitude
        t = float(np.sqrt(max(0.0, (magnitude ** 2 - xi @ xi / 2.0) / 2.0))) * (1.0 + 1e-12)

    for shift in PERTURBATION_SCHEDULE if wavevectors is not None else (0.0,):
        pair = _pair(xi, t * (1.0 + shift) if t > 0 else shift * float(np.linalg.norm(xi)))
        if wavevectors is None:
            return pair
        scale = max(1.0, float(np.abs(pair.rho1).max()) ** 2)
        worst = min(np.abs(lattice_symbol(pair.rho1, wavevectors)).min(),
                    np.abs(lattice_symbol(pair.rho2, wavevectors)).min())
        if worst > clearance * scale:
            if shift:
                logger.debug("Perturbed phase to avoid a lattice collision", shift=shift, clearance=worst)
            return pair
    raise LatticeCollisionError(f"symbol vanishes on the lattice for xi={xi.tolist()} after all perturbations")
