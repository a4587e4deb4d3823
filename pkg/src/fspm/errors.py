"""Exception hierarchy shared across the toolkit.

``ValidationError`` subclasses signal bad input data or configuration and map
to exit code 1 in the command line front end; runtime model failures derive
from ``FspmError`` directly.
"""


class FspmError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(FspmError):
    """Invalid input data, file contents, or configuration."""


# -- topology ---------------------------------------------------------------

class InvalidTopology(ValidationError):
    """Structural rule violated (no root, multiple roots, empty axis...)."""


class DanglingParent(ValidationError):
    """An axis names a parent id that was never declared."""


class CycleDetected(ValidationError):
    """Parent links do not form a tree."""


class NonContiguousCA(ValidationError):
    """Gap or duplicate in the growth-cycle sequence of an axis."""


class BadInsertion(ValidationError):
    """Child axis does not attach to an existing parent growth unit."""


class CycleOutOfRange(ValidationError):
    """Requested growth cycle outside 1..age."""


# -- ingest -----------------------------------------------------------------

class SchemaError(ValidationError):
    """Missing or malformed column in a measurement file."""


class UnitError(ValidationError):
    """Nonpositive or otherwise physically impossible measured value."""


class DuplicateKey(ValidationError):
    """Two records share a key that must be unique."""


class MissingPA(ValidationError):
    """An axis has no physiological age assignment where one is required."""


# -- physiological age classification ---------------------------------------

class NoTerminalData(ValidationError):
    """An axis has no internode records in its topmost growth unit."""


class KTooLarge(ValidationError):
    """More clusters requested than distinct values available."""


class MainAxisNotHeaviest(ValidationError):
    """The main stem did not land in the heaviest weight cluster."""


# -- direct estimation --------------------------------------------------------

class InsufficientData(ValidationError):
    """Too few observations for the requested regression."""


class DegenerateSpread(ValidationError):
    """Regressor values carry no spread (all equal)."""


# -- engine -------------------------------------------------------------------

class ZeroDemandWithBiomass(FspmError):
    """Biomass available to allocate but total sink demand is zero."""


class UnsupportedRingMode(ValidationError):
    """Ring distribution mode not available in the requested engine mode."""


class SimulationFailed(FspmError):
    """A simulation inside a fitting loop raised; wraps the cause."""


# -- calibration --------------------------------------------------------------

class InfeasibleInit(ValidationError):
    """Initial parameter guess outside the declared bounds."""


# -- export -------------------------------------------------------------------

class TreeMismatch(ValidationError):
    """Trace and target series belong to different trees."""
