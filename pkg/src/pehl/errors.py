"""Exception types shared across the toolkit.

The CLI maps these onto distinct exit codes, so code deeper in the stack
should raise the most specific one that applies.
"""


class PehlError(Exception):
    """Base class for all toolkit errors."""


class DataError(PehlError):
    """Bad input data: malformed manifests, empty corpora, single-class labels."""


class DivergenceError(PehlError):
    """Training produced a non-finite objective or otherwise diverged."""


class ArtifactError(PehlError):
    """A model artifact is corrupt, truncated, or of an unsupported version."""
