import json
import os
from typing import Any, Dict, List, Optional

from jsonschema import ValidationError, validate
from loguru import logger
from pydantic import BaseModel, Field

from src.thermoeit.errors import ThermoEitError

REPORT_SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "identification_report_schema.json")


class ReportSchemaError(ThermoEitError):
    code = "report_schema"


class StageFailureModel(BaseModel):
    stage: str
    code: str
    message: str
    exit_code: int


class KappaSummary(BaseModel):
    count: int = Field(..., title="Eigenfunctions used in the κ estimate")
    estimator: str
    tail: float
    suggested_count: Optional[int] = None
    iterations: int = 0
    min: float
    max: float


class StageResiduals(BaseModel):
    gamma_misfit: Optional[float] = Field(None, title="Relative DtN form misfit of the γ fit")
    series: Optional[float] = Field(None, title="Relative residual of the Dirichlet series fit")
    eigenfunctions: List[float] = Field(default_factory=list, title="Per-cluster eigenfunction recovery residuals")


class IdentificationReport(BaseModel):
    stage: str = Field(..., title="Last completed stage, or 'complete'")
    mode: str = Field(..., title="Probe mode, sigma or xi")
    inputs_digest: str = Field(..., title="Digest of the measurement set the report was computed from")
    config_digest: Optional[str] = Field(None, title="Digest of the experiment configuration")
    eigenvalues: List[float] = Field(default_factory=list)
    multiplicities: List[int] = Field(default_factory=list)
    residuals: StageResiduals = Field(default_factory=StageResiduals)
    flux_independence: List[float] = Field(default_factory=list)
    kappa: Optional[KappaSummary] = None
    kappa_field_path: Optional[str] = None
    gamma_params: Optional[List[float]] = None
    gamma_field_path: Optional[str] = None
    dtn_gram: Optional[List[List[float]]] = None
    failures: List[StageFailureModel] = Field(default_factory=list)

    @classmethod
    def from_result(cls, result, inputs_digest: str, config_digest: Optional[str] = None,
                    kappa_field_path: Optional[str] = None,
                    gamma_field_path: Optional[str] = None) -> "IdentificationReport":
        payload = result.to_json()
        independent = result.series is not None and not any(f.stage == "flux_independence" for f in result.failures)
        stages = [("conductivity", result.gamma), ("dirichlet_series", result.series),
                  ("flux_independence", result.flux_independence if independent else None),
                  ("eigenfunctions", result.clusters or None), ("kappa", result.kappa)]
        if result.mode == "xi":
            stages = stages[1:]
        completed = [name for name, value in stages if value is not None]
        stage = "complete" if len(completed) == len(stages) else (completed[-1] if completed else "none")
        return cls(stage=stage, inputs_digest=inputs_digest, config_digest=config_digest,
                   kappa_field_path=kappa_field_path, gamma_field_path=gamma_field_path, **payload)


def load_schema(file_path: str = REPORT_SCHEMA_PATH) -> Dict[str, Any]:
    with open(file_path, "r") as file:
        return json.load(file)


def validate_report(report: Dict[str, Any], schema_path: str = REPORT_SCHEMA_PATH) -> Dict[str, Any]:
    try:
        validate(instance=report, schema=load_schema(schema_path))
    except ValidationError as e:
        logger.error(f"Identification report validation error: {e.message}")
        raise ReportSchemaError(f"identification report does not match its schema: {e.message}") from e
    return report
