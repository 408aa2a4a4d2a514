from db.base import Base
from db.models import CellCacheEntry, ExperimentRun

__all__ = [
    "Base",
    "CellCacheEntry",
    "ExperimentRun",
]
