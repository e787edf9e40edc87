from src.thermoeit.spectral_inverse.dirichlet_series import DirichletSeriesFit, default_window, fit_dirichlet_series
from src.thermoeit.spectral_inverse.dtn_form import (
    DtnFormTable,
    GammaFit,
    default_gamma_basis,
    equilibrium_total,
    extract_dtn_form,
    fit_gamma_from_dtn,
    harmonic_polynomial_probes,
    polarized_form,
    quadratic_form,
)
from src.thermoeit.spectral_inverse.eigenspaces import (
    EigenspaceMatch,
    flux_independence_check,
    match_eigenspaces,
    operator_consistency_check,
    trace_independence,
)
from src.thermoeit.spectral_inverse.kappa import (
    KappaEstimate,
    ScaledCluster,
    bulk_error,
    flux_coefficients,
    kappa_from_scaled_modes,
    recover_kappa,
    series_coefficients,
)
from src.thermoeit.spectral_inverse.pipeline import (
    IdentificationOptions,
    IdentificationResult,
    MeasurementSet,
    ProbePlan,
    StageFailure,
    check_flux_independence,
    full_pipeline,
    measure,
    reconstruct,
)

__all__ = [
    "DirichletSeriesFit", "default_window", "fit_dirichlet_series",
    "DtnFormTable", "GammaFit", "default_gamma_basis", "equilibrium_total", "extract_dtn_form",
    "fit_gamma_from_dtn", "harmonic_polynomial_probes", "polarized_form", "quadratic_form",
    "EigenspaceMatch", "flux_independence_check", "match_eigenspaces", "operator_consistency_check",
    "trace_independence",
    "KappaEstimate", "ScaledCluster", "bulk_error", "flux_coefficients", "kappa_from_scaled_modes",
    "recover_kappa", "series_coefficients",
    "IdentificationOptions", "IdentificationResult", "MeasurementSet", "ProbePlan", "StageFailure",
    "check_flux_independence", "full_pipeline", "measure", "reconstruct",
]
