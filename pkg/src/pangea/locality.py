"""Locality sets: named page collections tagged with durability, access
pattern, lifetime and recency attributes.

A locality set is the unit every other subsystem keys on: the paging system
reads its attributes to pick an eviction strategy and quota, the file store
keeps one data/meta file pair per set, and services update the attributes as
a side effect of being attached.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import (
    DuplicateName,
    LifetimeEndedError,
    PageSizeExceedsPool,
    SetNotFound,
)


class Durability(enum.Enum):
    WRITE_BACK = "write-back"
    WRITE_THROUGH = "write-through"


class WritingPattern(enum.Enum):
    SEQUENTIAL_WRITE = "sequential-write"
    CONCURRENT_WRITE = "concurrent-write"
    RANDOM_MUTABLE_WRITE = "random-mutable-write"
    NONE = "none"


class ReadingPattern(enum.Enum):
    SEQUENTIAL_READ = "sequential-read"
    RANDOM_READ = "random-read"
    NONE = "none"


class Lifetime(enum.Enum):
    ALIVE = "alive"
    LIFETIME_ENDED = "lifetime-ended"


class CurrentOperation(enum.Enum):
    READ = "read"
    WRITE = "write"
    READ_AND_WRITE = "read-and-write"
    NONE = "none"


class ServiceKind(enum.Enum):
    """Services that can be attached to a set; attachment infers attributes."""

    SEQ_WRITE = "seq-write"
    SEQ_READ = "seq-read"
    SHUFFLE = "shuffle"
    HASH = "hash"


# Which side of CurrentOperation each service contributes.
_WRITE_SERVICES = {ServiceKind.SEQ_WRITE, ServiceKind.SHUFFLE, ServiceKind.HASH}
_READ_SERVICES = {ServiceKind.SEQ_READ, ServiceKind.HASH}


@dataclass
class SetAttributes:
    durability: Durability
    writing_pattern: WritingPattern = WritingPattern.NONE
    reading_pattern: ReadingPattern = ReadingPattern.NONE
    lifetime: Lifetime = Lifetime.ALIVE
    current_operation: CurrentOperation = CurrentOperation.NONE
    access_recency: int = 0

    def snapshot(self) -> "SetAttributes":
        return replace(self)


# Seed throughput for profiled I/O times before any real I/O happened.
SEED_DISK_BYTES_PER_SECOND = 200 * 1024 * 1024
PROFILE_EMA_ALPHA = 0.3
DEFAULT_RANDOM_READ_PENALTY = 2.0


@dataclass
class LocalitySet:
    set_id: int
    name: str
    page_size: int
    attributes: SetAttributes
    pages: list[int] = field(default_factory=list)  # page_seq in creation order
    profiled_v_r: float = 0.0  # EMA of per-page disk read seconds
    profiled_v_w: float = 0.0  # EMA of per-page disk write seconds
    random_read_penalty: float = DEFAULT_RANDOM_READ_PENALTY
    partition_scheme: Optional[object] = None
    # In-page record layout granularity; shuffle sets use the small page size.
    record_slot_size: int = 0
    next_page_seq: int = 0

    def __post_init__(self):
        seed = self.page_size / SEED_DISK_BYTES_PER_SECOND
        if self.profiled_v_r == 0.0:
            self.profiled_v_r = seed
        if self.profiled_v_w == 0.0:
            self.profiled_v_w = seed
        if self.record_slot_size == 0:
            self.record_slot_size = self.page_size

    @property
    def read_penalty_w_r(self) -> float:
        """Cost-model read penalty: 1 unless the set is randomly read."""
        if self.attributes.reading_pattern is ReadingPattern.RANDOM_READ:
            return self.random_read_penalty
        return 1.0

    @property
    def alive(self) -> bool:
        return self.attributes.lifetime is Lifetime.ALIVE

    def sample_read_time(self, seconds: float) -> None:
        self.profiled_v_r = (
            PROFILE_EMA_ALPHA * seconds + (1 - PROFILE_EMA_ALPHA) * self.profiled_v_r
        )

    def sample_write_time(self, seconds: float) -> None:
        self.profiled_v_w = (
            PROFILE_EMA_ALPHA * seconds + (1 - PROFILE_EMA_ALPHA) * self.profiled_v_w
        )


def inferred_attributes(attrs: SetAttributes, kind: ServiceKind,
                        attached: set[ServiceKind]) -> SetAttributes:
    """Attribute vector after attaching `kind`, given already-attached services.

    Pure function: the result depends only on the prior vector and the service
    mix, which is what makes attach/detach sequences testable.
    """
    out = attrs.snapshot()
    if kind is ServiceKind.SEQ_WRITE:
        out.writing_pattern = WritingPattern.SEQUENTIAL_WRITE
    elif kind is ServiceKind.SHUFFLE:
        out.writing_pattern = WritingPattern.CONCURRENT_WRITE
    elif kind is ServiceKind.HASH:
        out.writing_pattern = WritingPattern.RANDOM_MUTABLE_WRITE
        out.reading_pattern = ReadingPattern.RANDOM_READ
    elif kind is ServiceKind.SEQ_READ:
        out.reading_pattern = ReadingPattern.SEQUENTIAL_READ
    now_attached = attached | {kind}
    out.current_operation = _operation_for(now_attached)
    return out


def _operation_for(attached: set[ServiceKind]) -> CurrentOperation:
    writes = bool(attached & _WRITE_SERVICES)
    reads = bool(attached & _READ_SERVICES)
    if writes and reads:
        return CurrentOperation.READ_AND_WRITE
    if writes:
        return CurrentOperation.WRITE
    if reads:
        return CurrentOperation.READ
    return CurrentOperation.NONE


class SetRegistry:
    """Registry of locality sets; safe for concurrent lookup, attribute
    mutation serialized per set by the engine lock above it."""

    def __init__(self, pool_capacity: int):
        self._pool_capacity = pool_capacity
        self._by_id: dict[int, LocalitySet] = {}
        self._by_name: dict[str, int] = {}
        self._attached: dict[int, list[ServiceKind]] = {}
        self._next_id = 0
        self._lock = threading.RLock()

    def create_set(self, name: str, page_size: int, durability: Durability,
                   tick: int = 0) -> LocalitySet:
        with self._lock:
            if name in self._by_name:
                raise DuplicateName(name)
            if page_size <= 0:
                raise PageSizeExceedsPool(f"page_size must be positive, got {page_size}")
            if page_size > self._pool_capacity:
                raise PageSizeExceedsPool(
                    f"page_size {page_size} exceeds pool capacity {self._pool_capacity}"
                )
            set_id = self._next_id
            self._next_id += 1
            ls = LocalitySet(
                set_id=set_id,
                name=name,
                page_size=page_size,
                attributes=SetAttributes(durability=durability, access_recency=tick),
            )
            self._by_id[set_id] = ls
            self._by_name[name] = set_id
            self._attached[set_id] = []
            return ls

    def get(self, set_id: int) -> LocalitySet:
        try:
            return self._by_id[set_id]
        except KeyError:
            raise SetNotFound(set_id) from None

    def get_by_name(self, name: str) -> LocalitySet:
        try:
            return self._by_id[self._by_name[name]]
        except KeyError:
            raise SetNotFound(name) from None

    def __contains__(self, set_id: int) -> bool:
        return set_id in self._by_id

    def all_sets(self) -> list[LocalitySet]:
        return list(self._by_id.values())

    def attach_service(self, set_id: int, kind: ServiceKind) -> SetAttributes:
        """Attach a service and infer the new attribute vector."""
        with self._lock:
            ls = self.get(set_id)
            if not ls.alive:
                raise LifetimeEndedError(ls.name)
            attached = set(self._attached[set_id])
            ls.attributes = inferred_attributes(ls.attributes, kind, attached)
            self._attached[set_id].append(kind)
            return ls.attributes.snapshot()

    def detach_service(self, set_id: int, kind: ServiceKind) -> SetAttributes:
        """Detach one instance of `kind`; CurrentOperation is recomputed from
        what remains attached. Patterns stay: they describe how the data was
        laid down, not what is touching it now."""
        with self._lock:
            ls = self.get(set_id)
            lst = self._attached[set_id]
            if kind in lst:
                lst.remove(kind)
            ls.attributes.current_operation = _operation_for(set(lst))
            return ls.attributes.snapshot()

    def attached_services(self, set_id: int) -> list[ServiceKind]:
        self.get(set_id)
        return list(self._attached[set_id])

    def mark_lifetime_ended(self, set_id: int) -> None:
        with self._lock:
            ls = self.get(set_id)
            ls.attributes.lifetime = Lifetime.LIFETIME_ENDED

    def record_access(self, set_id: int, tick: int) -> None:
        with self._lock:
            ls = self.get(set_id)
            if tick > ls.attributes.access_recency:
                ls.attributes.access_recency = tick

    def drop(self, set_id: int) -> LocalitySet:
        with self._lock:
            ls = self.get(set_id)
            del self._by_id[set_id]
            del self._by_name[ls.name]
            del self._attached[set_id]
            return ls

    def stats_map(self) -> dict[str, dict]:
        """Manager-style metadata snapshot: one entry per set."""
        out = {}
        for ls in self._by_id.values():
            out[ls.name] = {
                "set_id": ls.set_id,
                "page_size": ls.page_size,
                "durability": ls.attributes.durability.value,
                "writing_pattern": ls.attributes.writing_pattern.value,
                "reading_pattern": ls.attributes.reading_pattern.value,
                "lifetime": ls.attributes.lifetime.value,
                "current_operation": ls.attributes.current_operation.value,
                "partition_scheme": getattr(ls.partition_scheme, "scheme_id", None),
            }
        return out
