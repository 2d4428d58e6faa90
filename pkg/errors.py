"""
Exception hierarchy for the rotor engine toolkit.

Library code raises these; rotorctl maps them to process exit codes:
    0 ok
    2 ConfigurationError, LayoutError, StateFormatError, InputError
    3 TruncationOverflowError
    4 NumericalBlowupError, StateValidityError
    5 SteadyStateNotConvergedError
"""

from typing import Optional


class RotorEngineError(Exception):
    """Base class for every error raised by the toolkit."""
    exit_code = 1


class LayoutError(RotorEngineError):
    """Factor index out of range, wrong factor kind or mismatched layouts."""
    exit_code = 2


class ConfigurationError(RotorEngineError):
    """Invalid parameters or an unsupported model configuration."""
    exit_code = 2

    def __init__(self, message: str, key_path: Optional[str] = None):
        self.key_path = key_path
        self.detail = message
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class InputError(RotorEngineError):
    """Invalid numerical input (spacing, sample count, shapes)."""
    exit_code = 2


class StateFormatError(RotorEngineError):
    """RQDM1 file could not be decoded."""
    exit_code = 2


class StateValidityError(RotorEngineError):
    """Density matrix violates Hermiticity, trace or positivity."""
    exit_code = 4


class NumericalBlowupError(RotorEngineError):
    """Non-finite entries appeared in the evolving state."""
    exit_code = 4


class TruncationOverflowError(RotorEngineError):
    """Population at a rotor truncation edge exceeded the abort threshold."""
    exit_code = 3

    def __init__(self, boundary: str, population: float, t: float):
        self.boundary = boundary
        self.population = population
        self.t = t
        super().__init__(
            f"truncation overflow at {boundary}: edge population {population:.3e} at t={t:.6g}"
        )


class SteadyStateNotConvergedError(RotorEngineError):
    """Relaxation reached t_max without meeting the residual tolerance."""
    exit_code = 5
