"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI uses when the error
escapes to the top level.
"""


class PlanallocError(Exception):
    exit_code = 2


class UsageError(PlanallocError):
    """Bad command-line usage or mutually inconsistent options."""

    exit_code = 1


class DataError(PlanallocError):
    """Malformed or mutually inconsistent input files."""

    exit_code = 2


class DegeneracyError(DataError):
    """Geometric degeneracy: duplicate points, collinear input, no bounded face."""

    exit_code = 2


class NumericalError(PlanallocError):
    """A numerical procedure failed to produce a usable result."""

    exit_code = 3


class ConformalError(NumericalError):
    """The map construction left the half-plane; finer boundary spacing may help."""

    exit_code = 3


class InvariantError(PlanallocError):
    """A hard invariant of a computed allocation does not hold."""

    exit_code = 4
