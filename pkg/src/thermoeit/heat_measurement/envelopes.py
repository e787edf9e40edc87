"""Time envelopes of the boundary voltage: smooth ramp, pulse χ_ε and its impulse limit."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad

from src.thermoeit.errors import ConfigError

RAMP_START = 0.5
RAMP_END = 1.0


class EnvelopeKind(str, Enum):
    RAMP = "ramp"
    PULSE = "pulse"
    IMPULSE = "impulse"
    CUSTOM = "custom"


def smoothstep(s: NDArray) -> NDArray:
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def _raw_bump(s: NDArray) -> NDArray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0.0) & (s < 1.0)
    out[inside] = np.exp(-1.0 / (s[inside] * (1.0 - s[inside])))
    return out


@lru_cache(maxsize=1)
def _bump_norm() -> float:
    value, _ = quad(lambda s: float(_raw_bump(np.array(s)) ** 2), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    return float(np.sqrt(value))


def pulse_profile(s: ArrayLike) -> NDArray:
    """χ on [0, 1] with ∫χ² = 1."""
    return _raw_bump(s) / _bump_norm()


def pulse_moment(rate: float, epsilon: float) -> float:
    """∫₀¹ χ²(s) e^{rate·ε·s} ds, the finite-pulse weight of a mode decaying at ``rate``."""
    value, _ = quad(lambda s: float(pulse_profile(np.array(s)) ** 2) * np.exp(rate * epsilon * s), 0.0, 1.0,
                    epsabs=1e-14, epsrel=1e-12, limit=200)
    return value


@dataclass(frozen=True)
class SourceEnvelope:
    """Scalar envelope α(t) multiplying the boundary voltage.

    The heat source scales with α(t)². ``impulse`` is the ε→0 limit of the pulse,
    where α² becomes a unit Dirac mass at t=0; it has no pointwise values and is
    evaluated spectrally.
    """

    kind: EnvelopeKind
    epsilon: Optional[float] = None
    function: Optional[Callable[[NDArray], NDArray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == EnvelopeKind.PULSE and (self.epsilon is None or self.epsilon <= 0):
            raise ConfigError(f"pulse envelope needs epsilon > 0, got {self.epsilon}")
        if self.kind == EnvelopeKind.CUSTOM and self.function is None:
            raise ConfigError("custom envelope needs a function")

    @classmethod
    def ramp(cls) -> "SourceEnvelope":
        return cls(EnvelopeKind.RAMP)

    @classmethod
    def pulse(cls, epsilon: float) -> "SourceEnvelope":
        return cls(EnvelopeKind.PULSE, float(epsilon))

    @classmethod
    def impulse(cls) -> "SourceEnvelope":
        return cls(EnvelopeKind.IMPULSE)

    @classmethod
    def custom(cls, function: Callable[[NDArray], NDArray]) -> "SourceEnvelope":
        return cls(EnvelopeKind.CUSTOM, function=function)

    @property
    def is_impulse(self) -> bool:
        return self.kind == EnvelopeKind.IMPULSE

    def __call__(self, t: ArrayLike) -> NDArray:
        t = np.asarray(t, dtype=float)
        if self.kind == EnvelopeKind.RAMP:
            return smoothstep((t - RAMP_START) / (RAMP_END - RAMP_START))
        if self.kind == EnvelopeKind.PULSE:
            return pulse_profile(t / self.epsilon) / np.sqrt(self.epsilon)
        if self.kind == EnvelopeKind.CUSTOM:
            return np.asarray(self.function(t), dtype=float)
        raise ValueError("impulse envelope has no pointwise values")

    def squared(self, t: ArrayLike) -> NDArray:
        return self(t) ** 2

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        """Times where the envelope changes regime; implicit schemes restart there."""
        if self.kind == EnvelopeKind.RAMP:
            return (RAMP_START, RAMP_END)
        if self.kind == EnvelopeKind.PULSE:
            return (self.epsilon,)
        return ()

    @property
    def resolved_interval(self) -> Optional[Tuple[float, float]]:
        """Interval that needs sub-stepping below the output grid."""
        if self.kind == EnvelopeKind.PULSE:
            return (0.0, self.epsilon)
        return None

    @property
    def flat_tail(self) -> Optional[Tuple[float, float]]:
        """(start, value of α²) beyond which the envelope is constant."""
        if self.kind == EnvelopeKind.RAMP:
            return (RAMP_END, 1.0)
        if self.kind == EnvelopeKind.PULSE:
            return (self.epsilon, 0.0)
        return None

    def decay_integral(self, rate: float, t: float) -> float:
        """∫₀^t e^{−rate(t−s)} α²(s) ds (e^{−rate·t} for the impulse)."""
        if t <= 0:
            return 0.0
        if self.is_impulse:
            return float(np.exp(-rate * t))
        cuts = [0.0] + [b for b in self.breakpoints if b < t] + [t]
        total = 0.0
        tail = self.flat_tail
        for a, b in zip(cuts[:-1], cuts[1:]):
            if tail is not None and a >= tail[0]:
                if tail[1]:
                    total += tail[1] * -np.expm1(-rate * (b - a)) / rate * np.exp(-rate * (t - b))
                continue
            value, _ = quad(lambda s: np.exp(-rate * (t - s)) * float(self.squared(s)), a, b,
                            epsabs=1e-15, epsrel=1e-12, limit=200)
            total += value
        return total

    def decay_integrals(self, rate: float, times: ArrayLike) -> NDArray:
        """``decay_integral`` on a time grid, propagating analytically past the flat tail."""
        times = np.asarray(times, dtype=float)
        if self.is_impulse:
            return np.exp(-rate * times)
        tail = self.flat_tail
        if tail is None:
            return np.array([self.decay_integral(rate, t) for t in times])
        start, level = tail
        base = self.decay_integral(rate, start)
        out = np.empty_like(times)
        early = times < start
        out[early] = [self.decay_integral(rate, t) for t in times[early]]
        elapsed = times[~early] - start
        out[~early] = base * np.exp(-rate * elapsed) - level * np.expm1(-rate * elapsed) / rate
        return out

    def describe(self) -> dict:
        return {"kind": self.kind.value, "epsilon": self.epsilon}
