"""Errors raised by the pddplab numerical library and experiment runner."""


class PDDPError(Exception):
    """Base class for every error raised by the ``core`` package."""


class ShapeError(PDDPError, ValueError):
    """An array does not have the dimensions the model declares."""


class DivergedRollout(PDDPError):
    """A simulated state became non-finite."""

    def __init__(self, timestep, message=None):
        self.timestep = timestep
        super().__init__(message or f"non-finite state at timestep {timestep}")


class DerivativeProbeFailed(PDDPError):
    """A finite-difference probe evaluated to a non-finite value."""


class NotPositiveDefinite(PDDPError):
    """
    A Hessian block failed its Cholesky factorization.

    ``block`` is ``'controls'`` for Quu, ``'parameters'`` for the parameter
    Schur complement and ``'qp'`` inside the box-QP solver. The solver reacts
    by escalating the matching regularizer.
    """

    def __init__(self, timestep=None, block='controls', message=None):
        self.timestep = timestep
        self.block = block
        where = f" at timestep {timestep}" if timestep is not None else ""
        super().__init__(message or f"{block} Hessian is not positive definite{where}")


class NonFiniteDerivative(PDDPError):
    def __init__(self, timestep, message=None):
        self.timestep = timestep
        super().__init__(message or f"non-finite derivative at timestep {timestep}")


class GimbalLock(DivergedRollout):
    """Euler-angle quadrotor pitch reached the +-90 degree singularity."""

    def __init__(self, pitch, timestep=None):
        self.pitch = pitch
        super().__init__(timestep, f"pitch {pitch:.6f} rad is at the Euler-angle singularity")


class ConfigError(PDDPError):
    """An experiment configuration failed to parse or validate."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        context = []
        if line is not None:
            context.append(f"line {line}")
        if field:
            context.append(f"field '{field}'")
        prefix = f"[{', '.join(context)}] " if context else ""
        super().__init__(f"{prefix}{message}")


class ReportIOError(PDDPError):
    def __init__(self, path, error):
        self.path = path
        super().__init__(f"{path}: {error}")
