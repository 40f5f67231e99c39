"""Bounded memory arena shared by all locality sets.

Page metadata (pin counts, ticks, flags) lives outside the arena so eviction
never loses bookkeeping; the arena only holds page byte regions. `used` is
always the exact sum of resident page sizes.
"""

from __future__ import annotations

from .allocator import AllocatorKind, ArenaFull, make_allocator
from .errors import NotResident, ZeroCapacity


class Page:
    """One fixed-size page of a locality set."""

    __slots__ = ("key", "size", "pin_count", "dirty", "last_access_tick",
                 "resident", "on_disk", "data", "arena_offset", "load_tick")

    def __init__(self, key: tuple[int, int], size: int):
        self.key = key                  # (set_id, page_seq)
        self.size = size
        self.pin_count = 0
        self.dirty = False
        self.last_access_tick = 0
        self.resident = False
        self.on_disk = False
        self.data: bytearray | None = None
        self.arena_offset: int | None = None
        self.load_tick = 0

    @property
    def set_id(self) -> int:
        return self.key[0]

    @property
    def page_seq(self) -> int:
        return self.key[1]

    def __repr__(self):
        state = []
        if self.resident:
            state.append("resident")
        if self.on_disk:
            state.append("on-disk")
        if self.dirty:
            state.append("dirty")
        return (f"<Page {self.key} size={self.size} pins={self.pin_count} "
                f"{'+'.join(state) or 'empty'}>")


class BufferPool:
    """Arena accounting plus the resident-page table."""

    def __init__(self, capacity: int, allocator_kind: AllocatorKind = AllocatorKind.SEGREGATED_FIT):
        if capacity <= 0:
            raise ZeroCapacity(capacity)
        self.capacity = capacity
        self.allocator_kind = allocator_kind
        self._allocator = make_allocator(allocator_kind, capacity)
        self.page_table: dict[tuple[int, int], Page] = {}

    @property
    def used(self) -> int:
        return self._allocator.used

    @property
    def free_bytes(self) -> int:
        return self._allocator.free_bytes

    def can_fit(self, size: int) -> bool:
        return self._allocator.can_fit(size)

    def can_ever_fit(self, size: int) -> bool:
        """False when no amount of eviction could satisfy the request
        (oversized, or wrong class for a slab pool)."""
        if size > self.capacity:
            return False
        slot = getattr(self._allocator, "_slot_size", None)
        return slot is None or size == slot

    def admit(self, page: Page, data: bytearray) -> None:
        """Make `page` resident, backed by a fresh arena slot. Raises ArenaFull
        when no contiguous slot fits; the engine evicts and retries."""
        page.arena_offset = self._allocator.allocate(page.size)
        page.data = data
        page.resident = True
        self.page_table[page.key] = page

    def release(self, page: Page) -> None:
        """Drop a resident page's bytes and reclaim its slot."""
        if not page.resident:
            raise NotResident(page.key)
        self._allocator.free(page.arena_offset, page.size)
        page.arena_offset = None
        page.data = None
        page.resident = False
        del self.page_table[page.key]

    def validate(self) -> None:
        """Debug invariants: accounting exactness and pin/residency coupling."""
        total = sum(p.size for p in self.page_table.values())
        assert total == self.used, f"used={self.used} but resident bytes={total}"
        assert self.used <= self.capacity, "pool over capacity"
        for page in self.page_table.values():
            assert page.resident, f"{page.key} in table but not resident"
        for page in self.page_table.values():
            if page.pin_count > 0:
                assert page.resident, f"{page.key} pinned but not resident"


def create_pool(capacity: int, allocator_kind: AllocatorKind = AllocatorKind.SEGREGATED_FIT) -> BufferPool:
    return BufferPool(capacity, allocator_kind)


__all__ = ["Page", "BufferPool", "create_pool", "AllocatorKind", "ArenaFull"]
