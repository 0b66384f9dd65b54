"""Ledger-anchored multi-vendor federated satellite learning, desk scale.

Subpackages cover the orbit/visibility model, local training and sealing,
weighted aggregation and fusion, provenance hashing and the validator
committee, the event ledger with audit tooling, two network transports, and
the scenario orchestrator behind the `satfed` CLI.
"""

__version__ = "0.1.0"

from .errors import SatfedError

__all__ = ["SatfedError", "__version__"]
