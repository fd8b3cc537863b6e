"""Exception types shared across the package."""


class DriftFluxError(Exception):
    pass


class ParameterError(DriftFluxError, ValueError):
    """A physical parameter set violates one of the model constraints.

    ``constraint`` names the violated inequality so callers (and the CLI)
    can report it verbatim.
    """

    def __init__(self, constraint, message=None):
        self.constraint = constraint
        super().__init__(message or f"parameter constraint violated: {constraint}")


class ChartError(DriftFluxError, ValueError):
    """A state was handed to an operation expecting another coordinate chart."""


class SolverFault(DriftFluxError, RuntimeError):
    """Base class for faults that terminate a time integration.

    ``time`` is the simulation time at which the fault was detected, if known.
    """

    kind = "solver"

    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class VacuumFault(SolverFault):
    """A mass denominator (m̃, 1 + ρ) dropped below the guard threshold."""

    kind = "vacuum"

    def __init__(self, message, time=None, location=None, value=None):
        self.location = location
        self.value = value
        super().__init__(message, time)


class AdmissibilityFault(SolverFault):
    """The global-chart state left the admissibility radius ‖m‖∞, ‖n‖∞ ≤ am̄/(2(1+b))."""

    kind = "admissibility"

    def __init__(self, message, time=None, bound=None, value=None):
        self.bound = bound
        self.value = value
        super().__init__(message, time)


class BlowUpFault(SolverFault):
    kind = "blowup"


class StabilityFault(SolverFault):
    """The fixed time step exceeds the CFL bound re-evaluated on the current state."""

    kind = "stability"


class RecipeError(DriftFluxError, ValueError):
    """An initial-data recipe cannot be realised (band limits, admissibility)."""


class ConfigError(DriftFluxError, ValueError):
    pass
