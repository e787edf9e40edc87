"""Experiment configuration read from TOML."""
from __future__ import annotations

import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.thermoeit.discretization import Mesh, ScalarField, TensorField, build_box_mesh, build_disk_mesh
from src.thermoeit.errors import ConfigError, InvalidCoefficientError
from src.thermoeit.expressions import Expression, ExpressionError
from src.thermoeit.hashing import generate_hash
from src.thermoeit.heat_measurement import SourceEnvelope
from src.thermoeit.spectral_inverse import IdentificationOptions

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SAMPLES_PER_AXIS = 9


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainSpec(_Section):
    shape: Literal["box", "disk"] = "box"
    lengths: List[float] = Field(default_factory=lambda: [1.0, 1.0])
    divisions: List[int] = Field(default_factory=lambda: [32, 32])
    radius: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _consistent_axes(self) -> "DomainSpec":
        if self.shape == "box":
            if len(self.lengths) not in (2, 3) or len(self.lengths) != len(self.divisions):
                raise ValueError("box lengths and divisions need one entry per axis (2 or 3 axes)")
            if any(length <= 0 for length in self.lengths) or any(d < 2 for d in self.divisions):
                raise ValueError("box lengths must be positive and divisions at least 2")
        elif len(self.divisions) != 1 and len(set(self.divisions)) != 1:
            raise ValueError("disk takes a single division count")
        return self

    @property
    def dimension(self) -> int:
        return 2 if self.shape == "disk" else len(self.lengths)

    def build_mesh(self) -> Mesh:
        if self.shape == "disk":
            return build_disk_mesh(self.radius, self.divisions[0])
        return build_box_mesh(len(self.lengths), self.lengths, self.divisions)

    def sample_points(self) -> np.ndarray:
        """Tensor grid over the box, or the same grid clipped to the disk."""
        if self.shape == "disk":
            axis = np.linspace(-self.radius, self.radius, SAMPLES_PER_AXIS)
            grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
            return grid[np.linalg.norm(grid, axis=1) <= self.radius * (1 + 1e-12)]
        axes = [np.linspace(0.0, length, SAMPLES_PER_AXIS) for length in self.lengths]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(self.lengths))


class CoefficientSpec(_Section):
    gamma: str = "1"
    kappa: str = "1"
    A: Optional[List[List[str]]] = None
    gamma_min: float = Field(default=1e-6, gt=0)
    kappa_min: float = Field(default=1e-6, gt=0)
    A_min: float = Field(default=1e-6, gt=0)

    @field_validator("A", mode="before")
    @classmethod
    def _stringify(cls, value):
        if value is None:
            return value
        return [[str(entry) for entry in row] for row in value]

    def tensor_expressions(self, dimension: int) -> List[List[Expression]]:
        rows = self.A or [["1" if i == j else "0" for j in range(dimension)] for i in range(dimension)]
        if len(rows) != dimension or any(len(row) != dimension for row in rows):
            raise ConfigError(f"A must be a {dimension}x{dimension} matrix of expressions")
        return [[Expression.compile(entry) for entry in row] for row in rows]

    def gamma_field(self, mesh: Mesh) -> ScalarField:
        return ScalarField.from_function(mesh, Expression.compile(self.gamma), self.gamma_min, name="gamma")

    def kappa_field(self, mesh: Mesh) -> ScalarField:
        return ScalarField.from_function(mesh, Expression.compile(self.kappa), self.kappa_min, name="kappa")

    def tensor_field(self, mesh: Mesh) -> TensorField:
        return TensorField(mesh, evaluate_tensor(self.tensor_expressions(mesh.dimension), mesh.nodes), self.A_min,
                           name="A")


def evaluate_tensor(expressions: Sequence[Sequence[Expression]], points: np.ndarray) -> np.ndarray:
    return np.stack([np.stack([entry(points) for entry in row], axis=-1) for row in expressions], axis=-2)


class SourceSpec(_Section):
    h: str = "x"
    h_tilde: Optional[str] = None
    envelope: Literal["ramp", "pulse", "impulse"] = "ramp"
    epsilon: float = Field(default=1e-2, gt=0)

    def build_envelope(self) -> SourceEnvelope:
        if self.envelope == "pulse":
            return SourceEnvelope.pulse(self.epsilon)
        return SourceEnvelope.impulse() if self.envelope == "impulse" else SourceEnvelope.ramp()


class TimeSpec(_Section):
    t_end: float = Field(default=2.5, gt=0)
    dt: float = Field(default=1e-2, gt=0)

    @model_validator(mode="after")
    def _step_fits(self) -> "TimeSpec":
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        return self


class SolverSpec(_Section):
    eigen_count: int = Field(default=60, ge=1)
    cluster_rtol: float = Field(default=1e-6, gt=0)
    impulse_modes: int = Field(default=80, ge=1)


class HalfspaceSpec(_Section):
    lengths: List[float] = Field(default_factory=lambda: [4.0, 0.75])
    divisions: List[int] = Field(default_factory=lambda: [256, 96])
    point: List[float] = Field(default_factory=lambda: [2.0, 0.0])
    frequencies: List[Union[float, str]] = Field(default_factory=lambda: ["2*pi", "4*pi"])
    depths: List[float] = Field(default_factory=lambda: [0.03125, 0.046875, 0.0625, 0.078125, 0.09375])
    normal_coefficient: float = Field(default=1.0, gt=0)

    def frequency_values(self) -> List[float]:
        return [float(f) if not isinstance(f, str) else Expression.compile(f).constant() for f in self.frequencies]

    def build_mesh(self) -> Mesh:
        return build_box_mesh(2, self.lengths, self.divisions)


class CgoSpec(_Section):
    gamma: str = "1 + 0.5*exp(-20*((x-0.5)^2 + (y-0.5)^2 + (z-0.5)^2))"
    magnitudes: List[float] = Field(default_factory=lambda: [20.0, 40.0, 80.0, 160.0])
    xi: List[float] = Field(default_factory=lambda: [1.0, 0.0, 0.0])
    divisions: int = Field(default=4, ge=2)
    grid: int = Field(default=48, ge=8)
    probe_count: int = Field(default=40, ge=1)
    basis_dim: int = Field(default=10, ge=1)


class ExperimentConfig(_Section):
    domain: DomainSpec = Field(default_factory=DomainSpec)
    coefficients: CoefficientSpec = Field(default_factory=CoefficientSpec)
    sources: SourceSpec = Field(default_factory=SourceSpec)
    time: TimeSpec = Field(default_factory=TimeSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    identification: IdentificationOptions = Field(default_factory=IdentificationOptions)
    halfspace: HalfspaceSpec = Field(default_factory=HalfspaceSpec)
    cgo: CgoSpec = Field(default_factory=CgoSpec)
    output: Optional[str] = None
    seed: int = 0

    @property
    def digest(self) -> str:
        return generate_hash(self.model_dump(mode="json"))

    def identification_options(self) -> IdentificationOptions:
        return self.identification.model_copy(update={"seed": self.seed})

    def check(self, text: Optional[str] = None) -> "ExperimentConfig":
        """Parse every expression and check coefficient bounds on a sample grid of the domain."""
        points = self.domain.sample_points()
        scalar_checks = [("coefficients", "gamma", self.coefficients.gamma, self.coefficients.gamma_min),
                         ("coefficients", "kappa", self.coefficients.kappa, self.coefficients.kappa_min)]
        for section, key, text_value, bound in scalar_checks:
            values = _compiled(text, section, key, text_value)(points)
            if values.min() < bound:
                raise InvalidCoefficientError(f"{key} = {text_value!r} reaches {values.min():.6g} below {bound:.6g}",
                                              line=locate_key(text, section, key))
        try:
            tensor = evaluate_tensor(self.coefficients.tensor_expressions(self.domain.dimension), points)
        except ExpressionError as e:
            raise ExpressionError(str(e).split(" (line")[0], line=locate_key(text, "coefficients", "A"),
                                  column=e.column) from e
        smallest = float(np.linalg.eigvalsh(0.5 * (tensor + np.swapaxes(tensor, -1, -2))).min())
        if smallest < self.coefficients.A_min:
            raise InvalidCoefficientError(f"A is not uniformly elliptic (min eigenvalue {smallest:.6g})",
                                          line=locate_key(text, "coefficients", "A"))
        for key in ("h", "h_tilde"):
            value = getattr(self.sources, key)
            if value is not None:
                _compiled(text, "sources", key, value)(points)
        for frequency in self.halfspace.frequencies:
            if isinstance(frequency, str):
                _compiled(text, "halfspace", "frequencies", frequency).constant()
        _compiled(text, "cgo", "gamma", self.cgo.gamma)
        return self

    @classmethod
    def from_toml(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            line, column = _decode_position(e)
            raise ConfigError(f"{source}: invalid TOML: {str(e).split(' (at')[0]}", line=line, column=column) from e
        try:
            config = cls.model_validate(data)
        except ValidationError as e:
            error = e.errors()[0]
            location = [str(part) for part in error["loc"] if not isinstance(part, int)]
            section = location[0] if len(location) > 1 else None
            key = location[-1] if location else None
            raise ConfigError(f"{source}: {'.'.join(location) or 'config'}: {error['msg']}",
                              line=locate_key(text, section, key)) from e
        config.check(text)
        logger.debug("Loaded experiment config", source=source, digest=config.digest)
        return config

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_toml(path.read_text(encoding="utf-8"), str(path))


def _compiled(text: Optional[str], section: str, key: str, value: str) -> Expression:
    try:
        return Expression.compile(value)
    except ExpressionError as e:
        line = locate_key(text, section, key)
        column = e.column
        if line is not None and column is not None:
            # column inside the expression, shifted to the position in the file
            raw = text.splitlines()[line - 1]
            start = raw.find(value)
            column = column + start if start >= 0 else column
        raise ExpressionError(f"[{section}] {key}: {str(e).split(' (column')[0]}", line=line, column=column) from e


def _decode_position(error: Exception):
    line, column = getattr(error, "lineno", None), getattr(error, "colno", None)
    if line is None:
        match = re.search(r"line (\d+), column (\d+)", str(error))
        if match:
            line, column = int(match.group(1)), int(match.group(2))
    return line, column


def locate_key(text: Optional[str], section: Optional[str], key: Optional[str]) -> Optional[int]:
    """1-based line of ``key = ...`` inside ``[section]``, or of the section header for a missing key."""
    if not text or key is None:
        return None
    current: Optional[str] = None
    header_line = None
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("[") and not stripped.startswith("[["):
            current = stripped.strip("[]").strip()
            if current == section:
                header_line = number
            continue
        if pattern.match(raw) and (section is None or current == section):
            return number
    return header_line


def config_summary(config: ExperimentConfig) -> Dict[str, Any]:
    return {"digest": config.digest, "seed": config.seed, "domain": config.domain.model_dump(),
            "envelope": config.sources.envelope}
