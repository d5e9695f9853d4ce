"""Injectable time sources.

Queues and compute backends never read the system clock directly; they
take a clock object, so wall time and simulated time are interchangeable.
``WallClock`` reports real elapsed seconds. ``VirtualClock`` is a small
discrete-event engine: components schedule actions at absolute virtual
times and the clock advances only when a consumer waits on it, firing
due actions in time order. All timestamps are seconds relative to the
clock's origin.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable, Protocol

from .errors import SimulationStalledError


class Clock(Protocol):
    def now(self) -> float:
        """Current time in seconds since the clock origin."""
        ...

    def wait(self, cond: threading.Condition, timeout: float | None) -> None:
        """Block until ``cond`` is notified, an event fires, or ``timeout`` elapses.

        Called with ``cond`` held; must return with ``cond`` held.
        """
        ...


class WallClock:
    """Real time, measured from instantiation with a monotonic source."""

    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def wait(self, cond: threading.Condition, timeout: float | None) -> None:
        cond.wait(timeout)


class VirtualClock:
    """Deterministic simulated time.

    Single-threaded by design: events fire inside the waiting caller's
    thread. ``wait`` releases the caller's condition lock while an event
    action runs so the action may push messages back into the waited-on
    queue.
    """

    def __init__(self, start: float = 0.0) -> None:
        self._now = float(start)
        self._events: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()

    def now(self) -> float:
        return self._now

    def schedule(self, when: float, action: Callable[[], None]) -> None:
        """Arrange for ``action()`` to run when virtual time reaches ``when``."""
        if when < self._now:
            raise ValueError(f"cannot schedule at {when}: clock is already at {self._now}")
        heapq.heappush(self._events, (float(when), next(self._seq), action))

    def pending_events(self) -> int:
        return len(self._events)

    def wait(self, cond: threading.Condition, timeout: float | None) -> None:
        deadline = None if timeout is None else self._now + timeout
        if self._events and (deadline is None or self._events[0][0] <= deadline):
            when, _, action = heapq.heappop(self._events)
            self._now = max(self._now, when)
            cond.release()
            try:
                action()
            finally:
                cond.acquire()
        elif deadline is None:
            raise SimulationStalledError(
                "waiting forever on virtual time with no scheduled events")
        else:
            self._now = deadline
