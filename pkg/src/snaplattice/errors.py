"""Exception types shared across the package."""


class SnapLatticeError(Exception):
    """Base class for all package errors."""


class NonPositiveD(SnapLatticeError):
    """Geometry leaves no inversion travel (d <= 0)."""


class GeometryInfeasible(SnapLatticeError):
    """Lattice construction produced a non-positive rest length."""


class DegenerateElement(SnapLatticeError):
    """Coincident nodes or a collinear torsional triple beyond tolerance."""


class NoConvergence(SnapLatticeError):
    """Energy minimization hit the iteration cap before reaching stationarity.

    Carries the best iterate found so far in ``best_state``.
    """

    def __init__(self, message, best_state=None):
        super().__init__(message)
        self.best_state = best_state


class StepSizeUnderflow(SnapLatticeError):
    """Adaptive integrator step fell below the hard floor (stiffness pathology)."""


class UnitNeverSnapped(SnapLatticeError):
    """Resetting time requested for a unit that never inverted."""


class SnapDuringProbe(SnapLatticeError):
    """Stiffness probe triggered a snap event; state not probed in its linear range."""


class SingularSystem(SnapLatticeError):
    """Unregularized least squares on a rank-deficient feature matrix."""


class ConstraintViolation(SnapLatticeError):
    """Design candidate violates a variant constraint.

    ``name`` identifies the constraint, ``amount`` by how much it is violated.
    """

    def __init__(self, name, amount):
        super().__init__(f"constraint {name!r} violated by {amount:g}")
        self.name = name
        self.amount = amount


class InfeasibleState(SnapLatticeError):
    """A stable state required by the objective does not exist for this geometry."""


class NoFeasiblePoint(SnapLatticeError):
    """Every optimizer sample violated the problem constraints."""


class ConfigError(SnapLatticeError):
    """Malformed configuration document; message names the offending field."""
