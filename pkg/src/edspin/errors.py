"""Exception and warning types raised across the package."""


class EDSpinError(Exception):
    """Base class for all package errors."""


class NonSmoothField(EDSpinError, ValueError):
    """A sampled rotor or spinor field is too rough for central differences."""


class NotNormalized(EDSpinError, ValueError):
    """A state expected to have unit norm does not."""


class LatticeMismatch(EDSpinError, ValueError):
    """Two objects live on different lattices."""


class GradientMissing(EDSpinError, TypeError):
    """A functional cannot supply the gradient a computation needs."""


class NonHermitianKernel(EDSpinError, ValueError):
    """A generator kernel fails the Hermiticity check."""


class SolverDiverged(EDSpinError, RuntimeError):
    """An implicit time step did not converge."""


class PacketsNotSeparated(EDSpinError, RuntimeError):
    """Stern-Gerlach packets still overlap at the final time."""


class ConfigError(EDSpinError, ValueError):
    """A scenario configuration failed validation.

    ``diagnostics`` holds ``(field_path, message)`` pairs.
    """

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        lines = [base] + [f"  {path}: {msg}" for path, msg in self.diagnostics]
        return "\n".join(lines)


class CFLWarning(UserWarning):
    """The time step is large compared to the lattice stiffness bound."""


class FieldMismatchWarning(UserWarning):
    """Supplied magnetic field disagrees with the curl of the vector potential."""


class TimeReversalNotice(UserWarning):
    """An electric dipole coupling is active, which breaks time reversal."""


class LeftDomain(UserWarning):
    """A trajectory crossed the periodic boundary and was wrapped."""
