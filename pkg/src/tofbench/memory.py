"""Byte accounting for histogram payload allocations.

Memory is the limiting resource when working with very large spectrum sets,
so the data model reports every payload-sized allocation (counts, errors,
materialized edge arrays, raster buffers) to any active ledger.  Tests use
this to assert memory envelopes without depending on the OS allocator.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterator


class AllocationLedger:
    """Accumulates payload bytes reported while the ledger is active."""

    def __init__(self) -> None:
        self.total_bytes = 0
        self.events = 0

    def add(self, nbytes: int) -> None:
        self.total_bytes += nbytes
        self.events += 1


_lock = threading.Lock()
_active: list[AllocationLedger] = []


def track_bytes(nbytes: int) -> None:
    """Report an allocation of `nbytes` to every active ledger."""
    if not _active:
        return
    with _lock:
        for ledger in _active:
            ledger.add(nbytes)


@contextmanager
def tracking() -> Iterator[AllocationLedger]:
    """Activate a ledger for the duration of the block.

    Nested ledgers are allowed; each sees all allocations reported while
    it is active.
    """
    ledger = AllocationLedger()
    with _lock:
        _active.append(ledger)
    try:
        yield ledger
    finally:
        with _lock:
            _active.remove(ledger)
