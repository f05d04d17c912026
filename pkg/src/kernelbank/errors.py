"""Exception types shared across the package.

The CLI maps these onto exit codes: data problems (unreadable files,
malformed values, bad bank files) exit 2, numeric failures during bank
construction or prediction exit 3.
"""


class DataError(Exception):
    """Input data violates its contract (missing file, NaN cell, bad shape)."""


class BankFormatError(DataError):
    """A bank file is corrupt, truncated, or of an incompatible version."""


class ComputationError(Exception):
    """A numeric operation cannot produce a valid result."""


class EmptyCandidateSetError(ComputationError):
    """No bank entry matches a periodic step within the configured tolerance."""
