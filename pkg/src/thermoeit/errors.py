from typing import Optional, Sequence


class ThermoEitError(Exception):
    exit_code: int = 1
    code: str = "error"


class ConfigError(ThermoEitError, ValueError):
    exit_code = 2
    code = "config"

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        location = ""
        if line is not None:
            location = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(f"{message}{location}")


class InvalidCoefficientError(ConfigError):
    code = "invalid_coefficient"


class MeshError(ConfigError):
    code = "mesh"


class SolverError(ThermoEitError, RuntimeError):
    exit_code = 3
    code = "solver"


class SingularSystemError(SolverError):
    code = "singular_system"


class EigenSolverError(SolverError):
    code = "eigensolver"


class InsufficientModesError(SolverError):
    code = "insufficient_modes"

    def __init__(self, message: str, tail: float):
        self.tail = tail
        super().__init__(message)


class NonContractionError(SolverError):
    code = "non_contraction"


class LatticeCollisionError(SolverError):
    code = "lattice_collision"


class IdentificationError(ThermoEitError, RuntimeError):
    exit_code = 4
    code = "identification"


class EquilibriumNotReachedError(IdentificationError):
    code = "equilibrium"

    def __init__(self, message: str, decay_rate: float):
        self.decay_rate = decay_rate
        super().__init__(f"{message} (residual decay rate {decay_rate:.3e})")


class PencilRankError(IdentificationError):
    code = "pencil_rank"

    def __init__(self, message: str, singular_values: Sequence[float]):
        self.singular_values = list(singular_values)
        super().__init__(message)


class RankDeficiencyError(IdentificationError):
    code = "rank_deficiency"

    def __init__(self, message: str, singular_values: Sequence[float]):
        self.singular_values = list(singular_values)
        super().__init__(message)


class MultiplicityError(IdentificationError):
    code = "ambiguous_multiplicity"

    def __init__(self, message: str, singular_values: Sequence[float]):
        self.singular_values = list(singular_values)
        super().__init__(message)


class FitNotConvergedError(IdentificationError):
    code = "fit_not_converged"

    def __init__(self, message: str, history: Sequence):
        self.history = list(history)
        super().__init__(message)


class TensorFitError(IdentificationError):
    code = "tensor_fit"
