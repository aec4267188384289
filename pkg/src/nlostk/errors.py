"""Exception types shared across the toolkit."""

from __future__ import annotations


class DegenerateGeometryError(ValueError):
    """A hidden-scene point coincides with a wall point, so a propagation
    distance is zero and the fall-off terms are undefined."""


class EmptyDomainError(RuntimeError):
    """Every grid bin was deactivated; there is nothing left to optimize.

    Usually means the reduction threshold is set too high for the scene,
    or the albedo field collapsed to zero (e.g. all-zero measurements).
    """


class NoOverlapError(ValueError):
    """Two depth maps share no jointly valid pixels."""


class ReconstructionAborted(RuntimeError):
    """Reconstruction stopped before completing its schedule.

    Carries the last usable state so callers can still inspect or save it.
    """

    def __init__(self, reason: str, field, domain, trace):
        super().__init__(reason)
        self.reason = reason
        self.field = field
        self.domain = domain
        self.trace = trace
