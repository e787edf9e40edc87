"""Exponent and amplitude recovery from boundary flux traces Σ_k e^{−λ_k t} d_k G_k.

Exponents come from ESPRIT shift invariance on a block Hankel matrix of the
jointly compressed traces; amplitudes from a linear least-squares fit at the
clustered exponents.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray
from scipy import linalg
from scipy.optimize import least_squares

from src.thermoeit.discretization import BoundaryTrace, Mesh
from src.thermoeit.elliptic import cluster_indices
from src.thermoeit.errors import ConfigError, MultiplicityError, PencilRankError
from src.thermoeit.heat_measurement import FluxTrace

FIT_CLUSTER_RTOL = 1e-3
RANK_RTOL = 1e-10
MULTIPLICITY_FLOOR = 1e-6
STABILITY_FACTOR = 10.0
MULTIPLICITY_GAP = 3.0
SUBWINDOW_SHIFT = 0.1
OBSERVABILITY_FLOOR = 1e-12
WINDOW_FACTOR = 0.3


@dataclass(frozen=True, eq=False)
class DirichletSeriesFit:
    """Clustered exponents with per-cluster flux traces and per-probe coefficients.

    For cluster k, ``amplitude_traces[k]`` has shape (m_k, B) with rows of unit
    boundary norm, and ``coefficients[k]`` has shape (probes, m_k), so that the
    t = 0 amplitude of probe j is ``coefficients[k][j] @ amplitude_traces[k]``.

    ``conditioning[k]`` is σ_{m_k}/σ_1 of the full probe × boundary amplitude
    matrix, measured before truncation to rank m_k. ``noise_floors[k]`` is the
    relative cut used to choose m_k. ``truncated`` counts significant clusters
    dropped after the first one without a clean singular-value gap.
    """

    mesh: Mesh
    exponents: NDArray[np.float64]
    multiplicities: NDArray[np.int64]
    amplitude_traces: List[NDArray[np.float64]]
    coefficients: List[NDArray[np.float64]]
    residual: float
    window: Tuple[float, float]
    singular_values: NDArray[np.float64]
    observable: NDArray[np.bool_]
    conditioning: NDArray[np.float64]
    noise_floors: NDArray[np.float64]
    truncated: int = 0

    @property
    def cluster_count(self) -> int:
        return self.exponents.size

    @property
    def probe_count(self) -> int:
        return self.coefficients[0].shape[0] if self.coefficients else 0

    def amplitude_matrix(self, k: int) -> NDArray[np.float64]:
        return self.coefficients[k] @ self.amplitude_traces[k]

    def flux_traces(self, k: int) -> List[BoundaryTrace]:
        return [BoundaryTrace(self.mesh, row) for row in self.amplitude_traces[k]]

    def predict(self, times) -> NDArray[np.float64]:
        """Model traces with shape (probes, T, B)."""
        times = np.asarray(times, dtype=float)
        decay = np.exp(-np.outer(times, self.exponents))
        return np.einsum("tk,kjb->jtb", decay, np.stack([self.amplitude_matrix(k) for k in range(self.cluster_count)]))

    def to_json(self) -> dict:
        return {
            "exponents": self.exponents.tolist(),
            "multiplicities": self.multiplicities.tolist(),
            "coefficients": [c.tolist() for c in self.coefficients],
            "residual": self.residual,
            "window": list(self.window),
            "observable": self.observable.tolist(),
            "conditioning": self.conditioning.tolist(),
            "noise_floors": self.noise_floors.tolist(),
            "truncated": self.truncated,
            "hankel_singular_values": self.singular_values[:64].tolist(),
        }


def _stack_traces(traces: Sequence[FluxTrace]) -> Tuple[NDArray, float]:
    times = traces[0].times
    for trace in traces[1:]:
        if not np.array_equal(trace.times, times):
            raise ConfigError("all traces in one fit must share the time grid")
    if times.size < 4:
        raise ConfigError("a Dirichlet-series fit needs at least four samples")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-8, atol=0):
        raise ConfigError("Dirichlet-series fit needs uniformly sampled traces")
    return times, float(steps[0])


def default_window(traces: Sequence[FluxTrace]) -> Tuple[float, float]:
    """[0.3/λ̂₁, t_end] with λ̂₁ from the late-time decay of the trace norms."""
    times = traces[0].times
    norms = np.sqrt(sum(np.sum(trace.values ** 2 * trace.mesh.boundary_mass, axis=1) for trace in traces))
    late = max(2, times.size // 10)
    positive = norms[-late:] > 0
    if np.count_nonzero(positive) < 2:
        return float(times[0]), float(times[-1])
    slope = np.polyfit(times[-late:][positive], np.log(norms[-late:][positive]), 1)[0]
    rate = max(-slope, 1e-12)
    t_min = max(float(times[0]), WINDOW_FACTOR / rate)
    if t_min >= times[-1]:
        t_min = float(times[0])
    return t_min, float(times[-1])


def _esprit(data: NDArray, dt: float, mode_budget: int, rank_rtol: float):
    samples = data.shape[0]
    rows = samples // 2
    if rows < 2:
        raise PencilRankError("too few samples for a pencil", [])
    # block Hankel: rows are lags, columns run over (shift, channel)
    hankel = sliding_window_view(data, rows, axis=0).transpose(2, 0, 1).reshape(rows, -1)
    left, singular_values, _ = linalg.svd(hankel, full_matrices=False)
    if singular_values.size == 0 or singular_values[0] == 0:
        raise PencilRankError("trace carries no signal", singular_values)
    rank = int(np.sum(singular_values > rank_rtol * singular_values[0]))
    rank = min(rank, mode_budget, rows - 1)
    if rank < 1:
        raise PencilRankError("pencil rank collapsed", singular_values)
    signal = left[:, :rank]
    rotation = linalg.lstsq(signal[:-1], signal[1:])[0]
    poles = linalg.eigvals(rotation)
    valid = (np.abs(poles.imag) <= 1e-6 * np.abs(poles)) & (poles.real > 0) & (poles.real < 1)
    if not np.all(valid):
        logger.warning("Discarded non-decaying or oscillating poles", discarded=int(np.sum(~valid)))
    if not np.any(valid):
        raise PencilRankError("no decaying real poles in the pencil", singular_values)
    rates = np.sort(-np.log(poles.real[valid]) / dt)
    return rates, singular_values


def _merge_clusters(rates: NDArray, rtol: float) -> NDArray:
    labels = cluster_indices(rates, rtol)
    return np.array([rates[labels == label].mean() for label in np.unique(labels)])


def _amplitudes(times: NDArray, data: NDArray, rates: NDArray, origin: float):
    design = np.exp(-np.outer(times - origin, rates))
    coefficients = linalg.lstsq(design, data)[0]
    return coefficients, design


def _refine(times: NDArray, data: NDArray, rates: NDArray, origin: float) -> NDArray:
    def residual(log_rates):
        coefficients, design = _amplitudes(times, data, np.exp(log_rates), origin)
        return (design @ coefficients - data).ravel()

    start = residual(np.log(rates))
    result = least_squares(residual, np.log(rates), method="trf", x_scale=1.0, xtol=1e-14, ftol=1e-14,
                           max_nfev=50 * rates.size)
    refined = np.sort(np.exp(result.x))
    if np.linalg.norm(result.fun) < np.linalg.norm(start):
        return refined
    return rates


def _coefficient_drift(times: NDArray, data: NDArray, rates: NDArray, coefficients: NDArray) -> NDArray:
    """Change of the amplitudes when the window start moves later, at fixed exponents and origin.

    Components fed by unmodelled modes move with the window; resolved ones do not.
    """
    start = times[0] + SUBWINDOW_SHIFT * (times[-1] - times[0])
    later = times >= start
    if np.count_nonzero(later) <= rates.size + 1:
        return np.zeros_like(coefficients)
    shifted, _ = _amplitudes(times[later], data[later], rates, times[0])
    return shifted - coefficients


def _resolved_rank(singular_values: NDArray, floor: float) -> int:
    """Count above the floor, or 0 when the next value sits within MULTIPLICITY_GAP of the last kept one."""
    m = int(np.sum(singular_values > floor))
    if m == 0:
        return 0
    following = singular_values[m] if m < singular_values.size else 0.0
    return 0 if following * MULTIPLICITY_GAP > singular_values[m - 1] else m


def fit_dirichlet_series(traces: Union[FluxTrace, Sequence[FluxTrace]], mode_budget: int,
                         window: Optional[Tuple[float, float]] = None, cluster_rtol: float = FIT_CLUSTER_RTOL,
                         rank_rtol: float = RANK_RTOL, refine: bool = True,
                         amplitude_floor: float = 1e-9) -> DirichletSeriesFit:
    """Fit Σ_k e^{−λ_k t} A_k^{(j)} to one or several flux traces on a uniform grid."""
    traces = [traces] if isinstance(traces, FluxTrace) else list(traces)
    if not traces:
        raise ConfigError("fit_dirichlet_series needs at least one trace")
    if mode_budget < 1:
        raise ConfigError(f"mode_budget must be positive, got {mode_budget}")
    times, dt = _stack_traces(traces)
    mesh = traces[0].mesh
    t_min, t_max = default_window(traces) if window is None else window
    if t_min <= 0 or t_max <= t_min:
        raise ConfigError(f"fit window must satisfy 0 < t_min < t_max, got [{t_min}, {t_max}]")
    keep = (times >= t_min - 1e-12) & (times <= t_max + 1e-12)
    t = times[keep]
    weights = np.sqrt(mesh.boundary_mass)
    data = np.concatenate([trace.values[keep] * weights for trace in traces], axis=1)

    # joint temporal compression of all channels
    left, values, _ = linalg.svd(data, full_matrices=False)
    if values.size == 0 or values[0] == 0:
        raise PencilRankError("all traces vanish on the fit window", values)
    rank = int(np.sum(values > rank_rtol * values[0]))
    compressed = left[:, :rank] * values[:rank]

    rates, singular_values = _esprit(compressed, dt, mode_budget, rank_rtol)
    rates = _merge_clusters(rates, cluster_rtol)
    if refine and rates.size:
        rates = _merge_clusters(_refine(t, compressed, rates, t[0]), cluster_rtol)
    coefficients, design = _amplitudes(t, data, rates, t[0])
    residual = float(np.linalg.norm(design @ coefficients - data) / np.linalg.norm(data))

    probes, boundary = len(traces), mesh.boundary_nodes.size
    drift = _coefficient_drift(t, data, rates, coefficients)
    norms = np.linalg.norm(coefficients, axis=1)
    significant = np.flatnonzero(norms > amplitude_floor * norms.max())
    exponents, multiplicities, amplitude_traces, probe_coefficients = [], [], [], []
    conditioning, noise_floors, truncated = [], [], 0
    for position, index in enumerate(significant):
        rate = rates[index]
        # amplitude at t = 0 in the weighted coordinates
        scale = np.exp(rate * t[0])
        u, s, vt = linalg.svd((coefficients[index] * scale).reshape(probes, boundary), full_matrices=False)
        floor = max(MULTIPLICITY_FLOOR * s[0],
                    STABILITY_FACTOR * linalg.norm((drift[index] * scale).reshape(probes, boundary), 2))
        m = _resolved_rank(s, floor)
        if m == 0:
            if not exponents:
                raise MultiplicityError(f"no resolved multiplicity for the slowest cluster at λ = {rate:.6g}", s)
            truncated = significant.size - position
            logger.warning("Series truncated at a cluster without a clear singular-value gap", rate=float(rate),
                           dropped=truncated, floor=float(floor), singular_values=s[:8].tolist())
            break
        conditioning.append(float(s[m - 1] / s[0]))
        noise_floors.append(float(floor / s[0]))
        u, s, vt = u[:, :m], s[:m], vt[:m]
        flips = np.sign(vt[np.arange(m), np.argmax(np.abs(vt), axis=1)])
        vt, u = vt * flips[:, None], u * flips
        exponents.append(rate)
        multiplicities.append(m)
        amplitude_traces.append(vt / weights)
        probe_coefficients.append(u * s)

    exponents = np.asarray(exponents)
    observable = np.exp(-exponents * t_min) >= OBSERVABILITY_FLOOR
    logger.info("Fitted Dirichlet series", clusters=exponents.size, multiplicities=multiplicities,
                residual=residual, window=(t_min, t_max), truncated=truncated)
    if residual > 1e-4:
        logger.warning("Dirichlet-series residual is large", residual=residual, mode_budget=mode_budget)
    return DirichletSeriesFit(mesh, exponents, np.asarray(multiplicities, dtype=int), amplitude_traces,
                              probe_coefficients, residual, (float(t_min), float(t_max)), singular_values,
                              observable, np.asarray(conditioning), np.asarray(noise_floors), truncated)
