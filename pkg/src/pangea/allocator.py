"""Pool arena allocators.

The buffer pool hands out page-sized regions of one bounded arena. Two
allocators are provided: a segregated-fit allocator (free lists bucketed by
power-of-two size class, exact-size splitting, neighbor coalescing) for
variable page sizes, and a slab allocator with a single uniform size class.

Offsets are virtual: page bytes live in per-page buffers, the arena only
does the accounting, so `used` is exact (the sum of live allocation sizes).
"""

from __future__ import annotations

import enum

from .errors import InvalidArgs, ZeroCapacity


class AllocatorKind(enum.Enum):
    SEGREGATED_FIT = "segregated-fit"
    SLAB = "slab"


class ArenaFull(Exception):
    """Internal signal: no free block large enough."""


def _class_index(size: int) -> int:
    return max(0, size.bit_length() - 1)


class SegregatedFitAllocator:
    """Segregated free lists with exact-size splits and address-order coalescing."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ZeroCapacity(capacity)
        self.capacity = capacity
        self.used = 0
        # free block bookkeeping: start -> size, end -> start, class -> {starts}
        self._free_by_start: dict[int, int] = {0: capacity}
        self._free_by_end: dict[int, int] = {capacity: 0}
        self._buckets: dict[int, set[int]] = {_class_index(capacity): {0}}

    def _remove_free(self, start: int) -> int:
        size = self._free_by_start.pop(start)
        del self._free_by_end[start + size]
        bucket = self._buckets[_class_index(size)]
        bucket.discard(start)
        return size

    def _insert_free(self, start: int, size: int) -> None:
        self._free_by_start[start] = size
        self._free_by_end[start + size] = start
        self._buckets.setdefault(_class_index(size), set()).add(start)

    def allocate(self, size: int) -> int:
        """Return the offset of a block of exactly `size` bytes."""
        if size <= 0:
            raise InvalidArgs(f"allocation size must be positive, got {size}")
        start = self._find_block(size)
        if start is None:
            raise ArenaFull(size)
        block_size = self._remove_free(start)
        if block_size > size:
            self._insert_free(start + size, block_size - size)
        self.used += size
        return start

    def _find_block(self, size: int) -> int | None:
        # Blocks in bucket b have sizes in [2^b, 2^(b+1)): the home bucket may
        # hold blocks smaller than `size`, every higher bucket qualifies.
        home = _class_index(size)
        candidates = [s for s in self._buckets.get(home, ()) if self._free_by_start[s] >= size]
        if candidates:
            return min(candidates)
        for b in sorted(k for k in self._buckets if k > home):
            if self._buckets[b]:
                return min(self._buckets[b])
        return None

    def free(self, start: int, size: int) -> None:
        self.used -= size
        end = start + size
        # coalesce right neighbor
        if end in self._free_by_start:
            right_size = self._remove_free(end)
            size += right_size
            end = start + size
        # coalesce left neighbor
        if start in self._free_by_end:
            left_start = self._free_by_end[start]
            left_size = self._remove_free(left_start)
            start = left_start
            size += left_size
        self._insert_free(start, size)

    @property
    def free_bytes(self) -> int:
        return self.capacity - self.used

    def can_fit(self, size: int) -> bool:
        return self._find_block(size) is not None


class SlabAllocator:
    """One uniform size class; the first allocation fixes the slot size."""

    def __init__(self, capacity: int, slot_size: int | None = None):
        if capacity <= 0:
            raise ZeroCapacity(capacity)
        self.capacity = capacity
        self.used = 0
        self._slot_size = slot_size
        self._free_slots: list[int] = []
        self._next_fresh = 0
        if slot_size is not None:
            self._check_slot(slot_size)

    def _check_slot(self, size: int) -> None:
        if size <= 0 or size > self.capacity:
            raise InvalidArgs(f"slab slot size {size} out of range")

    def allocate(self, size: int) -> int:
        if self._slot_size is None:
            self._check_slot(size)
            self._slot_size = size
        if size != self._slot_size:
            raise InvalidArgs(
                f"slab allocator serves one size class ({self._slot_size}), got {size}"
            )
        if self._free_slots:
            start = self._free_slots.pop()
        else:
            start = self._next_fresh
            if start + size > self.capacity:
                raise ArenaFull(size)
            self._next_fresh = start + size
        self.used += size
        return start

    def free(self, start: int, size: int) -> None:
        self.used -= size
        self._free_slots.append(start)

    @property
    def free_bytes(self) -> int:
        return self.capacity - self.used

    def can_fit(self, size: int) -> bool:
        if self._slot_size is not None and size != self._slot_size:
            return False
        return bool(self._free_slots) or self._next_fresh + size <= self.capacity


def make_allocator(kind: AllocatorKind, capacity: int):
    if kind is AllocatorKind.SLAB:
        return SlabAllocator(capacity)
    return SegregatedFitAllocator(capacity)
