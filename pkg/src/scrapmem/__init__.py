"""Scrapbook episodic memory: day pages, an EM-graph index, staged forgetting and evaluation."""
from .config import EngineConfig, load_config
from .corpus import Corpus, MediaItem, ingest
from .emgraph import EMGraph
from .policy import PRESETS, ForgettingPolicy, load_policy
from .store import MemoryStore

__all__ = [
    "Corpus",
    "EMGraph",
    "EngineConfig",
    "ForgettingPolicy",
    "MediaItem",
    "MemoryStore",
    "PRESETS",
    "ingest",
    "load_config",
    "load_policy",
]
__version__ = "0.1.0"
