"""Exception types shared across modules.

The CLI maps these to process exit codes: ValidationError -> 2,
InvariantError -> 3, anything else propagates as a crash.
"""


class SimError(Exception):
    """Base class for all simulator errors."""


class ValidationError(SimError):
    """Bad scenario, geometry, or parameter input."""


class InvariantError(SimError):
    """An internal contract was broken; state is suspect."""


class TranslationFault(SimError):
    """Address has no mapping in the translation map."""


class CalibrationError(SimError):
    """Latency distributions overlap; thresholds cannot separate levels."""


class ClassificationAmbiguous(SimError):
    """Page color classification saw zero or multiple evicted probes."""


class PartialPaletteError(SimError):
    """Fewer color filters found than the geometry supports."""

    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"found {found} color filters, expected {expected}")


class PruneError(SimError):
    """Candidate set stopped evicting the target during pruning."""


class InferenceAmbiguous(SimError):
    """Latency matrix has no clear intra/cross split."""
