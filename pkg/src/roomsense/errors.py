"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``InvariantError`` -> 3.
"""


class RoomSenseError(Exception):
    pass


class DataError(RoomSenseError, ValueError):
    """Bad input data: too-short audio, degenerate matrices, unreadable files."""


class InvariantError(RoomSenseError, RuntimeError):
    """An internal numerical invariant was violated (e.g. NaN in an iterate)."""


class CorruptModel(DataError):
    pass


class UnsupportedVersion(DataError):
    pass
