"""Deterministic seed derivation.

Every subsystem gets its own random.Random stream derived from the scenario
seed plus a label path, so adding draws in one subsystem never shifts another.
"""

import hashlib
import random


def child_seed(seed: int, *labels) -> int:
    """Derive a stable 64-bit seed from a parent seed and a label path."""
    text = str(seed) + "/" + "/".join(str(x) for x in labels)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big")


def child_rng(seed: int, *labels) -> random.Random:
    return random.Random(child_seed(seed, *labels))
