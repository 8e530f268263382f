from typing import List, Optional


class SimulationException(Exception):
    exit_code: int = 3

    def __init__(self, message: str, error_code: str, failed_step: str, exit_code: Optional[int] = None):
        super().__init__(message)
        self.error_code = error_code
        self.failed_step = failed_step
        if exit_code is not None:
            self.exit_code = exit_code


class ParameterException(SimulationException):
    def __init__(self, message: str, failed_step: str = "parameter_check"):
        super().__init__(message, "PARAMETER_ERROR", failed_step)


class GeometryException(SimulationException):
    def __init__(self, message: str, failed_step: str = "lattice_geometry"):
        super().__init__(message, "GEOMETRY_ERROR", failed_step)


class ValidationException(SimulationException):
    def __init__(self, message: str, failed_step: str = "input_validation"):
        super().__init__(message, "VALIDATION_ERROR", failed_step)


class NumericalException(SimulationException):
    def __init__(self, message: str, failed_step: str = "numerics"):
        super().__init__(message, "NUMERICAL_ERROR", failed_step)


class EstimationException(SimulationException):
    def __init__(self, message: str, failed_step: str = "correlation_estimate"):
        super().__init__(message, "ESTIMATION_ERROR", failed_step)


class UnderdeterminedException(SimulationException):
    def __init__(self, message: str, unconstrained: List[tuple], failed_step: str = "phase_retrieval"):
        super().__init__(message, "UNDERDETERMINED_ERROR", failed_step)
        self.unconstrained = unconstrained


class InconsistentDataException(SimulationException):
    def __init__(self, message: str, residual: float, failed_step: str = "phase_retrieval"):
        super().__init__(message, "INCONSISTENT_DATA_ERROR", failed_step)
        self.residual = residual


class ConfigSchemaException(SimulationException):
    exit_code = 2

    def __init__(self, message: str, failed_step: str = "config_validation"):
        super().__init__(message, "CONFIG_SCHEMA_ERROR", failed_step)


class OutputIOException(SimulationException):
    exit_code = 4

    def __init__(self, message: str, failed_step: str = "output_io"):
        super().__init__(message, "OUTPUT_IO_ERROR", failed_step)
