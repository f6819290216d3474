"""Atomic primitives for the concurrent structures.

CPython exposes no hardware compare-and-swap, so CAS is emulated with a
small pool of striped locks. Plain loads are single bytecode reads and need
no lock.
"""

from __future__ import annotations

import threading
import time
from typing import Any

_STRIPES = 64
_stripe_locks = [threading.Lock() for _ in range(_STRIPES)]


def _stripe(obj: object) -> threading.Lock:
    return _stripe_locks[(id(obj) >> 4) % _STRIPES]


def cas_item(seq: list, index: int, expected: Any, new: Any) -> bool:
    """Replace ``seq[index]`` with ``new`` if it is currently ``expected``.

    Comparison is by identity, like a pointer CAS.
    """
    with _stripe(seq):
        if seq[index] is expected:
            seq[index] = new
            return True
        return False


class AtomicCounter:
    """Signed counter with atomic add."""

    __slots__ = ("_value", "_lock")

    def __init__(self, initial: int = 0) -> None:
        self._value = initial
        self._lock = threading.Lock()

    def add(self, delta: int = 1) -> int:
        with self._lock:
            self._value += delta
            return self._value

    def get(self) -> int:
        return self._value

    def __repr__(self) -> str:
        return f"AtomicCounter({self._value})"


def relax() -> None:
    """Back off inside a spin loop.

    ``sleep(0)`` does not hand the GIL to the thread being waited on, so this
    sleeps for the shortest interval the kernel grants (timer slack included).
    """
    time.sleep(1e-6)
