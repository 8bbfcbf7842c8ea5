"""Exception types shared across the package."""


class GridsegError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(GridsegError):
    """An input file (case, fleet, config, segmentation) could not be parsed."""


class SingularNetwork(GridsegError):
    """The reduced bus susceptance matrix is not invertible (disconnected grid)."""


class UnbalancedInjections(GridsegError):
    """Nodal injections do not sum to ~zero, so no DC flow exists."""


class InfeasibleDispatch(GridsegError):
    """No generator dispatch satisfies bounds, balance and branch limits."""


class ZeroFcr(GridsegError):
    """Frequency response gains sum to zero while a net load alteration is possible."""


class GridTooCoarse(GridsegError):
    """The assignment grid 1/D cannot represent the requested segment sizes."""


class TooLarge(GridsegError):
    """An enumeration exceeds its configured size cap."""


class BackendUnavailable(GridsegError):
    """The requested solver backend is not installed / not registered."""


class MalformedModel(GridsegError):
    """A model references unknown variables, duplicates names, or has bad bounds."""


class SolverFailure(GridsegError):
    """The backend terminated abnormally (no usable status)."""


class SolutionIntegrityError(GridsegError):
    """A solver solution failed the independent replay check. This is a defect."""


class MalformedColumn(GridsegError):
    """An attack column violates the alteration bounds of its source segmentation."""


class SegmentationMismatch(GridsegError):
    """A segmentation file does not match the fleet it is evaluated against."""
