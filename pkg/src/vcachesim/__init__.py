"""vcachesim — deterministic simulator of a virtualized cache hierarchy with
an eviction-set probing stack, windowed contention monitoring, and two
contention-driven resource policies (task placement, page-cache coloring)."""

__version__ = "0.1.0"

from .cache import CacheGeometry, CacheState, L2, LLC, MEMORY
from .context import SimContext, make_context
from .errors import (CalibrationError, InvariantError, SimError,
                     TranslationFault, ValidationError)
from .mem import FragmentationProfile, RemapEvent, TranslationMap

__all__ = [
    "CacheGeometry", "CacheState", "L2", "LLC", "MEMORY",
    "SimContext", "make_context",
    "SimError", "ValidationError", "InvariantError", "TranslationFault",
    "CalibrationError",
    "FragmentationProfile", "RemapEvent", "TranslationMap",
    "__version__",
]
