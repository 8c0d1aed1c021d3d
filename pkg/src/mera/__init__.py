"""MERA: retrieval-augmented multi-expert residue representations with
reliability-aware evidential fusion, on precomputed embeddings."""

from .config import MeraConfig
from .model import MeraModel
from .store import ProteinRecord, NeighborSet, Store, build_store, retrieve

__version__ = "0.1.0"

__all__ = [
    "MeraConfig",
    "MeraModel",
    "ProteinRecord",
    "NeighborSet",
    "Store",
    "build_store",
    "retrieve",
    "__version__",
]
