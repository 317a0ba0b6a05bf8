"""Logical clock for the simulation.

Time is integer nanoseconds so event ordering never depends on float
rounding. Public accessors expose microseconds/milliseconds as floats.
"""

NS_PER_US = 1_000
NS_PER_MS = 1_000_000


class LogicalClock:
    __slots__ = ("now_ns", "_seq")

    def __init__(self, start_ns: int = 0):
        self.now_ns = start_ns
        self._seq = 0

    @property
    def now_us(self) -> float:
        return self.now_ns / NS_PER_US

    @property
    def now_ms(self) -> float:
        return self.now_ns / NS_PER_MS

    def advance_ns(self, delta_ns: int) -> None:
        if delta_ns < 0:
            raise ValueError("clock cannot move backwards")
        self.now_ns += delta_ns

    def advance_ms(self, delta_ms: float) -> None:
        self.advance_ns(int(round(delta_ms * NS_PER_MS)))

    def next_seq(self) -> int:
        """Monotonic tie-breaker for events scheduled at the same instant."""
        self._seq += 1
        return self._seq


def ms_to_ns(ms: float) -> int:
    return int(round(ms * NS_PER_MS))
