"""Exception types shared across the package."""

from __future__ import annotations


class DimensionMismatchError(ValueError):
    """Two matrix operands have incompatible shapes."""

    def __init__(self, op: str, shape_a, shape_b):
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(
            f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}"
        )


class SvdError(RuntimeError):
    """The underlying SVD factorization failed to converge."""


class ProxIterationError(RuntimeError):
    """Iterative proximal computation hit its iteration cap."""

    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = float(residual)
        self.iterations = int(iterations)
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")


class SolverDivergenceError(RuntimeError):
    """The solver objective became non-finite."""

    def __init__(self, message: str, trace):
        self.trace = list(trace)
        super().__init__(message)


class ConfigError(ValueError):
    """An experiment configuration file is malformed; carries the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")
