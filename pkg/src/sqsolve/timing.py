"""Lightweight section timers used to break solver time into categories."""

from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager
from time import perf_counter

__all__ = ["Timers"]


class Timers:
    """Accumulates wall time per named section."""

    def __init__(self):
        self.totals: dict[str, float] = defaultdict(float)

    @contextmanager
    def section(self, name: str):
        t0 = perf_counter()
        try:
            yield
        finally:
            self.totals[name] += perf_counter() - t0

    def as_dict(self) -> dict[str, float]:
        return dict(self.totals)

    def percentages(self, total: float) -> dict[str, float]:
        if total <= 0.0:
            return {name: 0.0 for name in self.totals}
        return {name: 100.0 * t / total for name, t in self.totals.items()}
