"""Clocks. Timestamps are integer UTC seconds throughout the suite.

Simulations use :class:`SimClock` so every run is a pure function of its
seed; production paths use :class:`SystemClock`.
"""

from __future__ import annotations

import time


class SystemClock:
    def now(self) -> int:
        return int(time.time())


class SimClock:
    """Logical clock advanced explicitly by the harness."""

    def __init__(self, start: int = 0):
        self._now = int(start)

    def now(self) -> int:
        return self._now

    def advance(self, seconds: int = 1) -> int:
        self._now += int(seconds)
        return self._now
