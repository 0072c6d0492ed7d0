"""Exception types raised across the package."""


class PoolhapError(Exception):
    """Base class for all package errors."""


class DataInconsistencyError(PoolhapError):
    """Observed counts contradict each other (e.g. redundant rows disagree)."""


class InfeasibleSystemError(PoolhapError):
    """The integer system ``A z = y, z >= 0`` has no solution."""


class EnumerationOverflowError(PoolhapError):
    """Feasible-set enumeration exceeded its solution or time budget.

    Callers are expected to fall back to latent count sampling or to the
    normal approximation.
    """

    def __init__(self, message, n_found=None, elapsed=None):
        super().__init__(message)
        self.n_found = n_found
        self.elapsed = elapsed


class BoundaryError(PoolhapError):
    """A quantity is undefined on the boundary of the simplex."""


class NumericalSingularityError(PoolhapError):
    """A covariance matrix could not be factorised."""


class BasisTooLargeError(PoolhapError):
    """Markov basis completion exceeded its configured degree cap."""


class VerificationUnavailableError(PoolhapError):
    """Fiber connectivity cannot be checked because the fiber is too large."""


class ProposalStuckError(PoolhapError):
    """No move of the basis leads to a feasible neighbour of a non-singleton fiber."""


class ThresholdTooHighError(PoolhapError):
    """Partition ligation thresholding removed every partial haplotype of a block."""
