"""Data-processing services: sequential read/write, shuffle, hash aggregation.

Records are opaque byte strings framed with a u32 little-endian length prefix.
A record never spans two pages (or two shuffle small pages): the writer rolls
to a fresh page when the current one cannot fit the record. A zero length
prefix terminates a slot's record stream, which works because records are
never empty and pages start zero-filled.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Iterator, Optional

from .buffer_pool import Page
from .engine import StorageEngine
from .errors import (
    EvictionExhausted,
    InvalidArgs,
    KeyLargerThanPage,
    RecordLargerThanPage,
    RecordLargerThanSmallPage,
)
from .hashing import stable_hash64
from .locality import ServiceKind

_U32 = struct.Struct("<I")

DEFAULT_SMALL_PAGE = 4 * 1024 * 1024


def iter_slot_records(data, slot_size: int) -> Iterator[bytes]:
    """Yield framed records from a page image, honoring slot boundaries."""
    total = len(data)
    for slot_start in range(0, total, slot_size):
        off = slot_start
        end = min(slot_start + slot_size, total)
        while off + 4 <= end:
            (n,) = _U32.unpack_from(data, off)
            if n == 0:
                break
            yield bytes(data[off + 4:off + 4 + n])
            off += 4 + n


# ---------------------------------------------------------------------------
# sequential write / read
# ---------------------------------------------------------------------------

class SequentialWriter:
    """Appends records to a set through one pinned page at a time.

    Packing respects the set's record slot size so readers can parse pages of
    mixed provenance (a shuffle-partitioned set later extended by sequential
    writes stays consistent)."""

    def __init__(self, engine: StorageEngine, set_id: int):
        self._engine = engine
        self._set_id = set_id
        self._ls = engine.registry.get(set_id)
        self._page: Page | None = None
        self._off = 0
        engine.attach_service(set_id, ServiceKind.SEQ_WRITE)

    def add_record(self, payload: bytes) -> None:
        need = 4 + len(payload)
        slot = self._ls.record_slot_size
        if need > slot:
            raise RecordLargerThanPage(
                f"record needs {need} bytes, slot size is {slot}"
            )
        self._engine.touch_set(self._set_id)
        if self._page is None:
            self._roll()
        slot_end = (self._off // slot + 1) * slot
        if self._off + need > slot_end:
            self._off = slot_end  # a record never spans slots
        if self._off + need > self._ls.page_size:
            self._roll()
        data = self._page.data
        _U32.pack_into(data, self._off, len(payload))
        data[self._off + 4:self._off + need] = payload
        self._off += need

    def add_records(self, payloads) -> None:
        for p in payloads:
            self.add_record(p)

    def _roll(self) -> None:
        if self._page is not None:
            self._engine.unpin_page(self._page, dirty=True)
        self._page = self._engine.allocate_page(self._set_id)
        self._off = 0

    def close(self) -> None:
        if self._page is not None:
            self._engine.unpin_page(self._page, dirty=True)
            self._page = None
        self._engine.detach_service(self._set_id, ServiceKind.SEQ_WRITE)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RecordIterator:
    """One consumer of a shared scan queue; yields records of whole pages."""

    def __init__(self, scan: "SequentialScan"):
        self._scan = scan
        self._page: Page | None = None
        self._records: Iterator[bytes] | None = None

    def __iter__(self):
        return self

    def __next__(self) -> bytes:
        while True:
            if self._records is not None:
                try:
                    return next(self._records)
                except StopIteration:
                    self._scan.queue.release(self._page)
                    self._page = None
                    self._records = None
            page = self._scan.queue.next()
            if page is None:
                raise StopIteration
            self._page = page
            self._records = iter_slot_records(page.data, self._scan.slot_size)

    def close(self) -> None:
        if self._page is not None:
            self._scan.queue.release(self._page)
            self._page = None
            self._records = None


class SequentialScan:
    """Concurrent page iterators over one set; every record is delivered
    exactly once across all iterators."""

    def __init__(self, engine: StorageEngine, set_id: int, num_threads: int = 1):
        ls = engine.registry.get(set_id)
        self._engine = engine
        self._set_id = set_id
        self.slot_size = ls.record_slot_size
        engine.attach_service(set_id, ServiceKind.SEQ_READ)
        self.queue = engine.scan_queue(set_id, num_threads)
        self.iterators = [RecordIterator(self) for _ in range(num_threads)]

    def close(self) -> None:
        for it in self.iterators:
            it.close()
        self._engine.detach_service(self._set_id, ServiceKind.SEQ_READ)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_all_records(engine: StorageEngine, set_id: int) -> list[bytes]:
    with SequentialScan(engine, set_id, 1) as scan:
        return list(scan.iterators[0])


# ---------------------------------------------------------------------------
# shuffle
# ---------------------------------------------------------------------------

class _HostPage:
    __slots__ = ("page", "slots", "claimed", "released", "unpinned")

    def __init__(self, page: Page, slots: int):
        self.page = page
        self.slots = slots
        self.claimed = 0
        self.released = 0
        self.unpinned = False


class _SmallPage:
    __slots__ = ("host", "start", "end")

    def __init__(self, host: _HostPage, start: int, end: int):
        self.host = host
        self.start = start
        self.end = end


class _PartitionAllocator:
    """Splits small pages off a pinned host page of one partition's set.

    The host page is unpinned (dirty) once all of its small pages have been
    claimed and released; eviction may then spill it.
    """

    def __init__(self, engine: StorageEngine, set_id: int, small_size: int):
        self._engine = engine
        self._set_id = set_id
        self._small = small_size
        self._host: _HostPage | None = None
        self._open: list[_HostPage] = []
        self._lock = threading.Lock()
        ls = engine.registry.get(set_id)
        self._slots_per_host = ls.page_size // small_size

    def claim(self) -> _SmallPage:
        with self._lock:
            if self._host is None or self._host.claimed >= self._host.slots:
                page = self._engine.allocate_page(self._set_id)
                self._host = _HostPage(page, self._slots_per_host)
                self._open.append(self._host)
            host = self._host
            idx = host.claimed
            host.claimed += 1
            return _SmallPage(host, idx * self._small, (idx + 1) * self._small)

    def release(self, small: _SmallPage) -> None:
        with self._lock:
            host = small.host
            host.released += 1
            self._maybe_unpin(host)

    def _maybe_unpin(self, host: _HostPage) -> None:
        if (not host.unpinned and host.claimed >= host.slots
                and host.released >= host.claimed):
            self._engine.unpin_page(host.page, dirty=True)
            host.unpinned = True
            self._open.remove(host)

    def close(self) -> None:
        with self._lock:
            for host in list(self._open):
                if not host.unpinned:
                    self._engine.unpin_page(host.page, dirty=True)
                    host.unpinned = True
            self._open.clear()
            self._host = None


class VirtualShuffleBuffer:
    """Per-(writer, partition) write cursor into the partition's small pages."""

    def __init__(self, service: "ShuffleService", writer_id: int, partition_id: int):
        self.writer_id = writer_id
        self.partition_id = partition_id
        self._service = service
        self._alloc = service.allocator(partition_id)
        self._small: _SmallPage | None = None
        self._off = 0

    def add_record(self, payload: bytes) -> None:
        need = 4 + len(payload)
        if need > self._service.small_page_size:
            raise RecordLargerThanSmallPage(
                f"record needs {need} bytes, small page is {self._service.small_page_size}"
            )
        self._service.engine.touch_set(self._service.set_for(self.partition_id))
        small = self._small
        if small is None or self._off + need > small.end - small.start:
            if small is not None:
                self._alloc.release(small)
            small = self._small = self._alloc.claim()
            self._off = 0
        data = small.host.page.data
        base = small.start + self._off
        _U32.pack_into(data, base, len(payload))
        data[base + 4:base + need] = payload
        self._off += need

    def finish(self) -> None:
        if self._small is not None:
            self._alloc.release(self._small)
            self._small = None
            self._off = 0


class ShuffleService:
    """Routes records into one locality set per partition via small pages,
    so many writers can fill one partition page concurrently."""

    def __init__(self, engine: StorageEngine, partition_sets: dict[int, int],
                 small_page_size: int = DEFAULT_SMALL_PAGE):
        self.engine = engine
        self.small_page_size = small_page_size
        self._partition_sets = dict(partition_sets)
        self._allocators: dict[int, _PartitionAllocator] = {}
        self._buffers: dict[tuple[int, int], VirtualShuffleBuffer] = {}
        self._attached: list[int] = []
        for set_id in sorted(set(partition_sets.values())):
            ls = engine.registry.get(set_id)
            if ls.page_size % small_page_size != 0:
                raise InvalidArgs(
                    f"page size {ls.page_size} is not a multiple of the small "
                    f"page size {small_page_size}"
                )
            engine.attach_service(set_id, ServiceKind.SHUFFLE)
            ls.record_slot_size = small_page_size
            engine.persist_set_layout(set_id)
            self._attached.append(set_id)

    def set_for(self, partition_id: int) -> int:
        return self._partition_sets[partition_id]

    def allocator(self, partition_id: int) -> _PartitionAllocator:
        set_id = self._partition_sets[partition_id]
        if partition_id not in self._allocators:
            self._allocators[partition_id] = _PartitionAllocator(
                self.engine, set_id, self.small_page_size)
        return self._allocators[partition_id]

    def buffer(self, writer_id: int, partition_id: int) -> VirtualShuffleBuffer:
        key = (writer_id, partition_id)
        if key not in self._buffers:
            self._buffers[key] = VirtualShuffleBuffer(self, writer_id, partition_id)
        return self._buffers[key]

    def finish_writer(self, writer_id: int) -> None:
        for (w, _), buf in self._buffers.items():
            if w == writer_id:
                buf.finish()

    def close(self) -> None:
        for buf in self._buffers.values():
            buf.finish()
        for alloc in self._allocators.values():
            alloc.close()
        for set_id in self._attached:
            self.engine.detach_service(set_id, ServiceKind.SHUFFLE)
        self._attached.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# hash aggregation
# ---------------------------------------------------------------------------

class _PageFull(Exception):
    pass


_MIN_CLASS_LOG = 5          # smallest slab class: 32 bytes
_NUM_CLASSES = 32
_HDR_NBUCKETS = 0
_HDR_COUNT = 4
_HDR_BUMP = 8
_HDR_USED = 12
_FREE_HEADS = 16
_BUCKETS_START = _FREE_HEADS + 4 * _NUM_CLASSES
_ENTRY_HDR = 16             # next u32 | klen u32 | vlen u32 | class u32


def _class_index(nbytes: int) -> int:
    idx = max(nbytes - 1, 1).bit_length() - _MIN_CLASS_LOG
    return max(0, idx)


def _class_size(idx: int) -> int:
    return 1 << (idx + _MIN_CLASS_LOG)


class _HashPage:
    """An independent hash table living entirely inside one page: a bucket
    directory plus slab-class allocated entries. The page image is the
    serialization, so spilling a partition is just evicting its page."""

    def __init__(self, data: bytearray):
        self.data = data

    @classmethod
    def init_empty(cls, data: bytearray, nbuckets: int) -> "_HashPage":
        hp = cls(data)
        _U32.pack_into(data, _HDR_NBUCKETS, nbuckets)
        _U32.pack_into(data, _HDR_COUNT, 0)
        _U32.pack_into(data, _HDR_BUMP, _BUCKETS_START + 4 * nbuckets)
        _U32.pack_into(data, _HDR_USED, 0)
        for i in range(_NUM_CLASSES):
            _U32.pack_into(data, _FREE_HEADS + 4 * i, 0)
        data[_BUCKETS_START:_BUCKETS_START + 4 * nbuckets] = bytes(4 * nbuckets)
        return hp

    @staticmethod
    def buckets_for(page_size: int) -> int:
        return max(16, page_size // 256)

    @staticmethod
    def max_class_index(page_size: int) -> int:
        arena = page_size - _BUCKETS_START - 4 * _HashPage.buckets_for(page_size)
        limit = max(arena // 4, 64)
        return _class_index(limit) if _class_size(_class_index(limit)) <= limit \
            else _class_index(limit) - 1

    # -- helpers -----------------------------------------------------------

    def _u32(self, off: int) -> int:
        return _U32.unpack_from(self.data, off)[0]

    def _put(self, off: int, value: int) -> None:
        _U32.pack_into(self.data, off, value)

    @property
    def nbuckets(self) -> int:
        return self._u32(_HDR_NBUCKETS)

    @property
    def count(self) -> int:
        return self._u32(_HDR_COUNT)

    @property
    def used_bytes(self) -> int:
        return self._u32(_HDR_USED)

    def _bucket_off(self, h: int) -> int:
        return _BUCKETS_START + 4 * ((h >> 33) % self.nbuckets)

    def _alloc(self, cls_idx: int, max_cls: int) -> tuple[int, int]:
        data = self.data
        for c in range(cls_idx, max_cls + 1):
            head = self._u32(_FREE_HEADS + 4 * c)
            if head:
                self._put(_FREE_HEADS + 4 * c, self._u32(head))
                return head, c
        bump = self._u32(_HDR_BUMP)
        size = _class_size(cls_idx)
        if bump + size <= len(data):
            self._put(_HDR_BUMP, bump + size)
            return bump, cls_idx
        raise _PageFull()

    def _free(self, off: int, cls_idx: int) -> None:
        head_off = _FREE_HEADS + 4 * cls_idx
        self._put(off, self._u32(head_off))
        self._put(head_off, off)

    # -- operations --------------------------------------------------------

    def lookup(self, h: int, key: bytes) -> Optional[bytes]:
        data = self.data
        off = self._u32(self._bucket_off(h))
        klen = len(key)
        while off:
            ek = self._u32(off + 4)
            if ek == klen and data[off + _ENTRY_HDR:off + _ENTRY_HDR + ek] == key:
                vlen = self._u32(off + 8)
                vs = off + _ENTRY_HDR + ek
                return bytes(data[vs:vs + vlen])
            off = self._u32(off)
        return None

    def upsert(self, h: int, key: bytes, value: bytes,
               combine: Callable[[bytes, bytes], bytes], max_cls: int) -> bool:
        """Insert or combine; returns True when a new key was added.
        Raises _PageFull when the page cannot hold the result."""
        data = self.data
        bucket = self._bucket_off(h)
        off = self._u32(bucket)
        prev = None
        klen = len(key)
        while off:
            ek = self._u32(off + 4)
            if ek == klen and data[off + _ENTRY_HDR:off + _ENTRY_HDR + ek] == key:
                old_vlen = self._u32(off + 8)
                vs = off + _ENTRY_HDR + ek
                new_val = combine(bytes(data[vs:vs + old_vlen]), value)
                cls_idx = self._u32(off + 12)
                if _ENTRY_HDR + klen + len(new_val) <= _class_size(cls_idx):
                    self._put(off + 8, len(new_val))
                    data[vs:vs + len(new_val)] = new_val
                    self._put(_HDR_USED, self.used_bytes - old_vlen + len(new_val))
                    return False
                # relocate into a bigger class; allocate before unlinking
                new_off, new_cls = self._alloc(
                    _class_index(_ENTRY_HDR + klen + len(new_val)), max_cls)
                nxt = self._u32(off)
                self._write_entry(new_off, nxt, key, new_val, new_cls)
                if prev is None:
                    self._put(bucket, new_off)
                else:
                    self._put(prev, new_off)
                self._free(off, cls_idx)
                self._put(_HDR_USED, self.used_bytes - old_vlen + len(new_val))
                return False
            prev = off
            off = self._u32(off)
        need = _ENTRY_HDR + klen + len(value)
        new_off, new_cls = self._alloc(_class_index(need), max_cls)
        self._write_entry(new_off, self._u32(bucket), key, value, new_cls)
        self._put(bucket, new_off)
        self._put(_HDR_COUNT, self.count + 1)
        self._put(_HDR_USED, self.used_bytes + klen + len(value))
        return True

    def _write_entry(self, off: int, nxt: int, key: bytes, value: bytes,
                     cls_idx: int) -> None:
        data = self.data
        self._put(off, nxt)
        self._put(off + 4, len(key))
        self._put(off + 8, len(value))
        self._put(off + 12, cls_idx)
        ks = off + _ENTRY_HDR
        data[ks:ks + len(key)] = key
        data[ks + len(key):ks + len(key) + len(value)] = value

    def entries(self) -> Iterator[tuple[bytes, bytes]]:
        data = self.data
        for b in range(self.nbuckets):
            off = self._u32(_BUCKETS_START + 4 * b)
            while off:
                klen = self._u32(off + 4)
                vlen = self._u32(off + 8)
                ks = off + _ENTRY_HDR
                yield bytes(data[ks:ks + klen]), bytes(data[ks + klen:ks + klen + vlen])
                off = self._u32(off)


class _Partition:
    __slots__ = ("page", "hp", "depth", "spill_seqs")

    def __init__(self, page: Page | None, hp: _HashPage | None, depth: int):
        self.page = page
        self.hp = hp
        self.depth = depth
        self.spill_seqs: list[int] = []


class _Root:
    __slots__ = ("directory", "depth")

    def __init__(self, partition: _Partition):
        self.directory = [partition]
        self.depth = 0

    def live_partitions(self) -> list[_Partition]:
        seen = []
        for p in self.directory:
            if p not in seen:
                seen.append(p)
        return seen


class VirtualHashBuffer:
    """Hash aggregation over one locality set.

    Starts with K root partitions (one page each). A full partition first
    splits off a child partition (extendible-hashing prefix doubling inside
    its root); when no page can be allocated, the largest live partition is
    unpinned and spilled as partial-aggregation results. finalize() merges
    every partition's live page with its spill chain.
    """

    def __init__(self, engine: StorageEngine, set_id: int,
                 root_partitions: int = 200,
                 combine: Callable[[bytes, bytes], bytes] | None = None,
                 max_trie_depth: int = 40):
        ls = engine.registry.get(set_id)
        need = root_partitions * ls.page_size
        if need > engine.capacity:
            raise InvalidArgs(
                f"{root_partitions} root partitions of {ls.page_size} bytes "
                f"exceed the pool ({engine.capacity} bytes)"
            )
        self.engine = engine
        self.set_id = set_id
        self.K = root_partitions
        self._combine = combine
        self._max_depth = max_trie_depth
        self._page_size = ls.page_size
        self._nbuckets = _HashPage.buckets_for(ls.page_size)
        self._max_cls = _HashPage.max_class_index(ls.page_size)
        self._lock = threading.RLock()
        engine.attach_service(set_id, ServiceKind.HASH)
        self._roots = [_Root(self._fresh_partition(0)) for _ in range(root_partitions)]
        self.splits = 0
        self.spills = 0

    def _fresh_partition(self, depth: int) -> _Partition:
        page = self._allocate_page_with_spill()
        hp = _HashPage.init_empty(page.data, self._nbuckets)
        return _Partition(page, hp, depth)

    def _allocate_page_with_spill(self) -> Page:
        while True:
            try:
                return self.engine.allocate_page(self.set_id)
            except EvictionExhausted:
                self._spill_largest()

    def max_entry_payload(self) -> int:
        return _class_size(self._max_cls) - _ENTRY_HDR

    def upsert(self, key: bytes, value: bytes,
               combine: Callable[[bytes, bytes], bytes] | None = None) -> None:
        cb = combine or self._combine
        if cb is None:
            raise InvalidArgs("no combine function configured")
        if _ENTRY_HDR + len(key) + len(value) > _class_size(self._max_cls):
            raise KeyLargerThanPage(
                f"entry of {len(key)}+{len(value)} bytes exceeds the largest "
                f"slab class ({_class_size(self._max_cls)} bytes)"
            )
        h = stable_hash64(key)
        self.engine.touch_set(self.set_id)
        with self._lock:
            root = self._roots[h % self.K]
            u = h // self.K
            while True:
                part = root.directory[u & ((1 << root.depth) - 1)]
                if part.page is None:
                    self._revive(part)
                try:
                    part.hp.upsert(h, key, value, cb, self._max_cls)
                    return
                except _PageFull:
                    self._grow_or_spill(root, part)

    def lookup(self, key: bytes) -> Optional[bytes]:
        h = stable_hash64(key)
        with self._lock:
            root = self._roots[h % self.K]
            part = root.directory[(h // self.K) & ((1 << root.depth) - 1)]
            if part.page is None:
                return None
            return part.hp.lookup(h, key)

    # -- growth and degradation -------------------------------------------

    def _grow_or_spill(self, root: _Root, part: _Partition) -> None:
        page = None
        if part.depth < self._max_depth:
            try:
                page = self.engine.allocate_page(self.set_id)
            except EvictionExhausted:
                page = None
        if page is not None:
            self._split(root, part, page)
        else:
            self._spill_largest()

    def _split(self, root: _Root, part: _Partition, new_page: Page) -> None:
        if part.depth == root.depth:
            root.directory = root.directory * 2
            root.depth += 1
        old_depth = part.depth
        sibling = _Partition(new_page, _HashPage.init_empty(new_page.data, self._nbuckets),
                             old_depth + 1)
        part.depth = old_depth + 1
        for i, p in enumerate(root.directory):
            if p is part and (i >> old_depth) & 1:
                root.directory[i] = sibling
        entries = list(part.hp.entries())
        _HashPage.init_empty(part.page.data, self._nbuckets)
        replay = lambda old, new: new  # entries are unique within a page
        for k, v in entries:
            h = stable_hash64(k)
            target = sibling if ((h // self.K) >> old_depth) & 1 else part
            target.hp.upsert(h, k, v, replay, self._max_cls)
        self.splits += 1
        self.engine.stats.splits += 1

    def _spill_largest(self) -> None:
        victim = None
        for root in self._roots:
            for p in root.live_partitions():
                if p.page is None:
                    continue
                if victim is None or p.hp.used_bytes > victim.hp.used_bytes:
                    victim = p
        if victim is None:
            raise EvictionExhausted("hash buffer has no live partition to spill")
        self.engine.unpin_page(victim.page, dirty=True)
        self.engine.evict_page(victim.page.key)
        victim.spill_seqs.append(victim.page.page_seq)
        victim.page = None
        victim.hp = None
        self.spills += 1
        self.engine.stats.spills += 1

    def _revive(self, part: _Partition) -> None:
        page = self._allocate_page_with_spill()
        part.page = page
        part.hp = _HashPage.init_empty(page.data, self._nbuckets)

    # -- read-out -----------------------------------------------------------

    def finalize(self, combine: Callable[[bytes, bytes], bytes] | None = None
                 ) -> Iterator[tuple[bytes, bytes]]:
        """Merge each partition's live page with its spill chain; yields every
        key exactly once. Spill pages are read back through the buffer pool."""
        cb = combine or self._combine
        if cb is None:
            raise InvalidArgs("no combine function configured")
        with self._lock:
            partitions = [p for root in self._roots for p in root.live_partitions()]
        for part in partitions:
            acc: dict[bytes, bytes] = {}
            if part.page is not None:
                acc.update(part.hp.entries())
                self.engine.unpin_page(part.page, dirty=True)
                part.page = None
                part.hp = None
            for seq in part.spill_seqs:
                page = self.engine.pin_page((self.set_id, seq))
                hp = _HashPage(page.data)
                for k, v in hp.entries():
                    acc[k] = cb(acc[k], v) if k in acc else v
                self.engine.unpin_page(page)
            yield from acc.items()

    def close(self) -> None:
        with self._lock:
            for root in self._roots:
                for part in root.live_partitions():
                    if part.page is not None:
                        self.engine.unpin_page(part.page, dirty=True)
                        part.page = None
                        part.hp = None
            self.engine.detach_service(self.set_id, ServiceKind.HASH)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# convenience combine functions used by the CLI and tests

def sum_u64_combine(old: bytes, new: bytes) -> bytes:
    return ((int.from_bytes(old, "little") + int.from_bytes(new, "little"))
            & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")


def encode_u64(n: int) -> bytes:
    return (n & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")


def decode_u64(b: bytes) -> int:
    return int.from_bytes(b, "little")
