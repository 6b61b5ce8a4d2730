"""Exception types shared across the package."""


class ForestCensusError(Exception):
    """Base class for all errors raised by this package."""


class Malformed(ForestCensusError):
    """Structurally corrupt raster input.

    Carries the byte offset at which the corruption was detected.
    """

    def __init__(self, offset, reason):
        self.offset = int(offset)
        self.reason = reason
        super().__init__(f"malformed input at byte {self.offset}: {reason}")


class UnsupportedFeature(ForestCensusError):
    """Valid file, but uses a feature outside the supported subset."""

    def __init__(self, feature, offset=0):
        self.feature = feature
        self.offset = int(offset)
        super().__init__(f"unsupported feature at byte {self.offset}: {feature}")


class CrsMismatch(ForestCensusError):
    """Two grids carry different CRS tags; they cannot be combined."""


class DisjointExtents(ForestCensusError):
    """Two grids do not overlap in world coordinates."""


class EmptySignatureSet(ForestCensusError):
    """Classification requested with no spectral signatures."""


class MarkerOutsideCanopy(ForestCensusError):
    """A treetop marker sits on a pixel below the canopy height floor."""


class TooFewPlots(ForestCensusError):
    """Not enough ground plots for the requested operation."""


class SingularSystem(ForestCensusError):
    """Kriging system cannot be solved (e.g. duplicate plot coordinates)."""


class NonPositiveVariance(ForestCensusError):
    """Ensembling requires strictly positive component variances."""


class NegativeInput(ForestCensusError):
    """A physical quantity (diameter, height, density) was negative."""


class NonPositive(ForestCensusError):
    """A quantity that must be strictly positive was zero or negative."""


class ConfigError(ForestCensusError):
    """Invalid or incomplete pipeline configuration."""
