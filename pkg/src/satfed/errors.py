"""Exception hierarchy shared across the package."""


class SatfedError(Exception):
    """Base class for all package errors."""


class ConfigError(SatfedError):
    """Invalid scenario, geometry, or benchmark configuration."""


class ShapeError(SatfedError):
    """Dimension mismatch between models, datasets, or aggregates."""


class NumericError(SatfedError):
    """Non-finite value encountered during training or aggregation."""


class AuthorizationError(SatfedError):
    """Caller is not entitled to perform the operation."""


class CryptoError(SatfedError):
    """Sealing, unsealing, or signature failure."""


class FormatError(SatfedError):
    """Malformed key, signature, or serialized structure."""


class RegistryError(SatfedError):
    """Unknown principal or duplicate registration."""


class ProvenanceError(SatfedError):
    """Event references an artifact the ledger has never seen."""


class DegenerateInputError(SatfedError):
    """Empty input set or zero total mass where weights are required."""


class StalenessError(SatfedError):
    """Aggregates from different rounds mixed into one fusion."""


class FinalityError(SatfedError):
    """Block lacks the signature quorum required to finalize."""


class LedgerError(SatfedError):
    """Chain validation or persistence failure."""


class NotFoundError(SatfedError):
    """Requested token or record does not exist."""
