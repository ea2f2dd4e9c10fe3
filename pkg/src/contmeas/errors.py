"""Exception hierarchy shared by all contmeas modules."""


class SimulationError(Exception):
    """Base class for all errors raised by contmeas."""


class InvalidStateError(SimulationError):
    """A quantum state violates a structural invariant (non-finite entries, bad shape)."""


class ZeroNormError(InvalidStateError):
    """An operation that needs a normalizable state received one with zero norm."""


class HermiticityError(SimulationError):
    """An operator or density matrix is not Hermitian within tolerance."""


class DimensionMismatchError(SimulationError):
    """Operator and state dimensions are incompatible."""


class ConfigurationError(SimulationError):
    """Invalid run configuration.

    ``violations`` carries ``(field_path, message)`` pairs so every problem in a
    config file is reported at once, not just the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [("", violations)]
        self.violations = list(violations)
        lines = [f"{path}: {msg}" if path else msg for path, msg in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class StepSizeError(SimulationError):
    """Integration produced a non-finite or unstable result; reduce the time step."""


class ModeError(SimulationError):
    """An operation was applied to a trajectory produced in an incompatible mode."""


class EnumerationSizeError(SimulationError):
    """A record-lattice enumeration would exceed the hard size guard."""


class OracleConvergenceError(SimulationError):
    """An oracle computation (fixed-point search) failed to converge."""
