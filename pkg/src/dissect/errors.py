"""Exception hierarchy shared by all dissect modules.

Every error raised on a contract violation derives from :class:`DissectError`
so that the CLI and the HTTP service can map failures to a single diagnostic
line / a 400 response without enumerating modules.
"""


class DissectError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(DissectError, ValueError):
    """A caller-supplied argument is outside the documented domain."""


class DegenerateElementError(DissectError):
    """Element geometry has a non-positive Jacobian at a quadrature point."""


class NonSeparableError(DissectError):
    """Two elements cannot be separated by spatial subdivision."""


class InconsistencyError(DissectError):
    """Tree and mesh disagree (missing elements or uncovered DOFs)."""


class AssemblyScopeError(DissectError):
    """A contribution references a DOF outside the target node's scope."""


class SingularSystemError(DissectError):
    """Factorization hit a non-positive pivot."""

    def __init__(self, message, dof_id=None):
        super().__init__(message)
        self.dof_id = dof_id


class IncompleteSolutionError(DissectError):
    """Back substitution is missing an interface value."""


class ProtocolViolationError(DissectError):
    """Scheduler protocol invariant broken (e.g. duplicate completion)."""


class SchedulerStallError(DissectError):
    """All workers idle, no messages in flight, tasks still incomplete."""


class InvalidTraceError(DissectError):
    """Worker trace has overlapping or out-of-range intervals."""


class FormatError(DissectError):
    """A file or payload does not match its documented format."""

    def __init__(self, message, offset=0):
        super().__init__(message)
        self.offset = offset
