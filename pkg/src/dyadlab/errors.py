"""Shared exception taxonomy.

The CLI maps these onto exit codes: configuration and domain problems
exit 2, file format problems exit 3, failed verification checks exit 1.
"""


class DyadlabError(Exception):
    """Base class for all package errors."""


class ResourceError(DyadlabError):
    """A hard resource budget (cell count) would be exceeded."""


class AlignmentError(DyadlabError):
    """A rectangle or point is not aligned to the cell raster."""


class ShapeError(DyadlabError):
    """Array shape or lattice mismatch between operands."""


class DomainError(DyadlabError):
    """A parameter is outside its admissible range."""


class ScopeError(DyadlabError):
    """A grid query needs levels outside the available range."""


class FormatError(DyadlabError):
    """A serialized weight or grid descriptor cannot be parsed."""


class ContractViolationError(DyadlabError):
    """A guaranteed search came up empty; indicates a genuine bug."""


class DegenerateSampleError(DyadlabError):
    """A Monte Carlo run produced no usable samples."""
