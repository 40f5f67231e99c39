"""Single-node storage engine: one buffer pool, one file store, one set
registry, and a pluggable eviction policy behind a single eviction region.

Thread model: one re-entrant lock serializes every state mutation
(pin/unpin/allocate/evict); eviction decisions therefore never race with pin
state changes. Page byte regions may be read under any pin and written only
by the holder of the sole pin.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
from dataclasses import dataclass, field

from .allocator import AllocatorKind, ArenaFull
from .buffer_pool import BufferPool, Page
from .errors import (
    EvictionExhausted,
    InvalidArgs,
    LifetimeEndedError,
    MissingImage,
    NoEvictablePage,
    NotPinned,
    NotResident,
    PagePinned,
    PagesStillPinned,
    PageUnknown,
)
from .file_store import FileStore
from .locality import Durability, Lifetime, LocalitySet, ServiceKind, SetRegistry
from .paging import CostModelParams, EvictionPolicy, make_policy

CATALOG_FILE = "catalog.json"


@dataclass
class EngineConfig:
    capacity: int
    storage_dirs: list[str]
    allocator: AllocatorKind = AllocatorKind.SEGREGATED_FIT
    policy: str = "data-aware"
    cost_params: CostModelParams = field(default_factory=CostModelParams)
    # Deterministic synthetic I/O timings for benchmark reproducibility;
    # wall-clock profiling otherwise.
    synthetic_io_clock: bool = False
    debug_checks: bool = False
    keep_event_log: bool = False
    background_flush: bool = False


@dataclass
class EngineStats:
    pages_loaded: int = 0
    pages_evicted: int = 0
    flushes: int = 0
    spills: int = 0
    splits: int = 0


class StorageEngine:
    def __init__(self, config: EngineConfig):
        self.config = config
        self.pool = BufferPool(config.capacity, config.allocator)
        self.registry = SetRegistry(config.capacity)
        self.events: list[tuple] = []
        hook = self._log_io_event if config.keep_event_log else None
        self.store = FileStore(config.storage_dirs, event_hook=hook)
        self.policy: EvictionPolicy = make_policy(config.policy, config.cost_params)
        self.stats = EngineStats()
        self._pages: dict[tuple[int, int], Page] = {}
        self._evictable: dict[int, dict[tuple[int, int], Page]] = {}
        self._resident: dict[int, dict[tuple[int, int], Page]] = {}
        self._tick = 0
        self._lock = threading.RLock()
        self._flush_queue: queue.Queue | None = None
        self._flush_thread = None
        if config.background_flush:
            self._flush_queue = queue.Queue()
            self._flush_thread = threading.Thread(target=self._flush_worker, daemon=True)
            self._flush_thread.start()

    # ------------------------------------------------------------------ #
    # clock

    @property
    def tick(self) -> int:
        return self._tick

    @property
    def capacity(self) -> int:
        return self.pool.capacity

    def _touch_page(self, page: Page, ls: LocalitySet) -> None:
        self._tick += 1
        page.last_access_tick = self._tick
        ls.attributes.access_recency = self._tick

    def touch_set(self, set_id: int) -> None:
        """Service-level record access: advances the clock, bumps recency."""
        with self._lock:
            ls = self.registry.get(set_id)
            self._tick += 1
            ls.attributes.access_recency = self._tick

    def record_access(self, set_id: int, tick: int) -> None:
        self.registry.record_access(set_id, tick)

    # ------------------------------------------------------------------ #
    # set lifecycle

    def create_set(self, name: str, page_size: int,
                   durability: Durability = Durability.WRITE_THROUGH) -> LocalitySet:
        with self._lock:
            ls = self.registry.create_set(name, page_size, durability, tick=self._tick)
            self.store.register_set(ls.set_id, page_size)
            self._evictable[ls.set_id] = {}
            self._resident[ls.set_id] = {}
            self._persist_catalog()
            return ls

    def get_set(self, name: str) -> LocalitySet:
        return self.registry.get_by_name(name)

    def mark_lifetime_ended(self, set_id: int) -> None:
        """Idempotent; the set's pages become top eviction candidates and its
        dirty pages will be discarded instead of written back."""
        with self._lock:
            self.registry.mark_lifetime_ended(set_id)

    def remove_set(self, set_id: int) -> None:
        with self._lock:
            ls = self.registry.get(set_id)
            pages = [self._pages[(set_id, seq)] for seq in ls.pages
                     if (set_id, seq) in self._pages]
            for page in pages:
                if page.pin_count > 0:
                    raise PagesStillPinned(page.key)
            # Whole-set deallocation: per-page arena frees, no per-record work.
            for page in pages:
                if page.resident:
                    self.pool.release(page)
                self._pages.pop(page.key, None)
            self._evictable.pop(set_id, None)
            self._resident.pop(set_id, None)
            self.store.delete_set(set_id)
            self.registry.drop(set_id)
            self._persist_catalog()
            self._validate()

    def attach_service(self, set_id: int, kind: ServiceKind):
        return self.registry.attach_service(set_id, kind)

    def detach_service(self, set_id: int, kind: ServiceKind):
        return self.registry.detach_service(set_id, kind)

    # ------------------------------------------------------------------ #
    # page operations

    def allocate_page(self, set_id: int) -> Page:
        """New empty page, pinned once. Evicts per policy when space is short."""
        with self._lock:
            ls = self.registry.get(set_id)
            if not ls.alive:
                raise LifetimeEndedError(ls.name)
            self.policy.check_admission(self)
            self._ensure_space(ls.page_size, set_id)
            seq = ls.next_page_seq
            ls.next_page_seq += 1
            ls.pages.append(seq)
            page = Page((set_id, seq), ls.page_size)
            self._pages[page.key] = page
            self.pool.admit(page, bytearray(ls.page_size))
            page.pin_count = 1
            self._touch_page(page, ls)
            page.load_tick = self._tick
            self._resident[set_id][page.key] = page
            self._validate()
            return page

    def pin_page(self, key: tuple[int, int]) -> Page:
        with self._lock:
            page = self._pages.get(key)
            if page is None:
                raise PageUnknown(key)
            ls = self.registry.get(key[0])
            if not page.resident:
                if not page.on_disk or not self.store.has_page(*key):
                    raise MissingImage(key)
                self.policy.check_admission(self)
                self._ensure_space(page.size, key[0])
                t0 = time.perf_counter()
                data = self.store.read_page(*key)
                ls.sample_read_time(self._io_seconds(t0, page.size))
                self.pool.admit(page, bytearray(data))
                self.stats.pages_loaded += 1
                self._resident[key[0]][key] = page
                loaded = True
            else:
                loaded = False
            page.pin_count += 1
            self._evictable[key[0]].pop(key, None)
            self._touch_page(page, ls)
            if loaded:
                page.load_tick = page.last_access_tick
            self._validate()
            return page

    def unpin_page(self, page: Page | tuple[int, int], dirty: bool = False) -> None:
        with self._lock:
            if isinstance(page, tuple):
                key = page
                page = self._pages.get(key)
                if page is None:
                    raise PageUnknown(key)
            if page.pin_count < 1:
                raise NotPinned(page.key)
            page.pin_count -= 1
            if dirty:
                page.dirty = True
            ls = self.registry.get(page.set_id)
            if page.pin_count == 0:
                if (page.dirty and ls.alive
                        and ls.attributes.durability is Durability.WRITE_THROUGH):
                    self._flush(page, ls)
                if page.resident:
                    self._evictable[page.set_id][page.key] = page
            self._validate()

    def evict_page(self, key: tuple[int, int]) -> int:
        """Explicit eviction; returns bytes written back."""
        with self._lock:
            page = self._pages.get(key)
            if page is None:
                raise PageUnknown(key)
            if page.pin_count > 0:
                raise PagePinned(key)
            if not page.resident:
                raise NotResident(key)
            return self._evict(page)

    def flush_all(self) -> None:
        """Write back every dirty page of every alive set without evicting."""
        with self._lock:
            self.drain_flushes()
            for page in list(self.pool.page_table.values()):
                ls = self.registry.get(page.set_id)
                if page.dirty and ls.alive:
                    self._flush(page, ls, synchronous=True)

    # ------------------------------------------------------------------ #
    # internals

    def _io_seconds(self, t0: float, nbytes: int) -> float:
        if self.config.synthetic_io_clock:
            return nbytes / (200 * 1024 * 1024)
        return max(time.perf_counter() - t0, 1e-9)

    def _log_io_event(self, kind: str, set_id: int, page_seq: int) -> None:
        self.events.append((kind, set_id, page_seq))

    def _flush(self, page: Page, ls: LocalitySet, synchronous: bool = False) -> None:
        if self._flush_queue is not None and not synchronous:
            self._flush_queue.put(page.key)
            return
        self._write_back(page, ls)

    def _flush_worker(self) -> None:
        while True:
            key = self._flush_queue.get()
            if key is None:
                return
            with self._lock:
                page = self._pages.get(key)
                if page is None or not page.resident or not page.dirty:
                    continue
                self._write_back(page, self.registry.get(key[0]))

    def drain_flushes(self) -> None:
        if self._flush_queue is None:
            return
        while not self._flush_queue.empty():
            time.sleep(0.001)

    def _write_back(self, page: Page, ls: LocalitySet) -> None:
        t0 = time.perf_counter()
        self.store.append_page(page.set_id, page.page_seq, bytes(page.data))
        ls.sample_write_time(self._io_seconds(t0, page.size))
        page.dirty = False
        page.on_disk = True
        self.stats.flushes += 1

    def _evict(self, page: Page) -> int:
        ls = self.registry.get(page.set_id)
        written = 0
        if page.dirty and ls.alive:
            self._write_back(page, ls)
            written = page.size
        # lifetime-ended pages are discarded, dirty or not
        page.dirty = False
        self.pool.release(page)
        self._evictable[page.set_id].pop(page.key, None)
        self._resident[page.set_id].pop(page.key, None)
        self.stats.pages_evicted += 1
        if self.config.keep_event_log:
            self.events.append(("evict", page.set_id, page.page_seq))
        return written

    def _ensure_space(self, size: int, requesting_set: int | None) -> None:
        if not self.pool.can_ever_fit(size):
            raise InvalidArgs(f"pool can never serve a {size}-byte page")
        while not self.pool.can_fit(size):
            try:
                decisions = self.policy.decide(self, requesting_set)
            except NoEvictablePage as exc:
                raise EvictionExhausted(str(exc)) from exc
            progressed = False
            for decision in decisions:
                for key in decision.victim_pages:
                    page = self.pool.page_table.get(key)
                    if page is None or page.pin_count > 0:
                        continue  # stale decision entry
                    self._evict(page)
                    progressed = True
            if not progressed:
                raise EvictionExhausted(
                    f"policy produced no applicable victims for {size} bytes"
                )

    def _validate(self) -> None:
        if self.config.debug_checks:
            self.pool.validate()

    # policy view helpers ------------------------------------------------

    def evictable_pages(self, set_id: int) -> list[Page]:
        return list(self._evictable.get(set_id, {}).values())

    def resident_pages(self, set_id: int) -> list[Page]:
        return list(self._resident.get(set_id, {}).values())

    # ------------------------------------------------------------------ #
    # scans

    def scan_queue(self, set_id: int, num_consumers: int = 1) -> "ScanQueue":
        with self._lock:
            ls = self.registry.get(set_id)
            return ScanQueue(self, set_id, list(ls.pages), num_consumers)

    # ------------------------------------------------------------------ #
    # persistence of the set catalog (restart support)

    def _catalog_path(self) -> str:
        return os.path.join(self.store.stripe_dirs[0], CATALOG_FILE)

    def _persist_catalog(self) -> None:
        entries = {}
        for ls in self.registry.all_sets():
            entries[ls.name] = {
                "set_id": ls.set_id,
                "page_size": ls.page_size,
                "durability": ls.attributes.durability.value,
                "record_slot_size": ls.record_slot_size,
            }
        payload = {"next_id": self.registry._next_id, "sets": entries}
        tmp = self._catalog_path() + ".tmp"
        with open(tmp, "w") as f:
            json.dump(payload, f)
        os.replace(tmp, self._catalog_path())

    def persist_set_layout(self, set_id: int) -> None:
        """Re-persist catalog after a service fixes a set's record layout."""
        with self._lock:
            self._persist_catalog()

    def close(self) -> None:
        if self._flush_queue is not None:
            self.drain_flushes()
            self._flush_queue.put(None)
            self._flush_thread.join(timeout=5)
            self._flush_queue = None

    @classmethod
    def open(cls, config: EngineConfig) -> "StorageEngine":
        """Start an engine over existing storage directories, restoring every
        catalogued set from its meta file. In-memory-only pages are gone; this
        is the crash-restart path."""
        engine = cls(config)
        path = os.path.join(engine.store.stripe_dirs[0], CATALOG_FILE)
        if not os.path.exists(path):
            return engine
        with open(path) as f:
            payload = json.load(f)
        for name, entry in sorted(payload["sets"].items(), key=lambda kv: kv[1]["set_id"]):
            ls = engine.registry.create_set(
                name, entry["page_size"], Durability(entry["durability"]))
            # keep the persisted id so meta files resolve
            temp_id, real_id = ls.set_id, entry["set_id"]
            engine.registry._by_name[name] = real_id
            engine.registry._by_id[real_id] = engine.registry._by_id.pop(temp_id)
            engine.registry._attached[real_id] = engine.registry._attached.pop(temp_id)
            ls.set_id = real_id
            ls.record_slot_size = entry["record_slot_size"]
            engine._evictable[ls.set_id] = {}
            engine._resident[ls.set_id] = {}
            meta_path = os.path.join(engine.store.stripe_dirs[0], f"{ls.set_id}.meta")
            if not os.path.exists(meta_path):
                engine.store.register_set(ls.set_id, ls.page_size)
                continue
            sf = engine.store.load_meta(ls.set_id)
            ls.pages = sorted(sf.index)
            ls.next_page_seq = (max(sf.index) + 1) if sf.index else 0
            for seq in ls.pages:
                page = Page((ls.set_id, seq), ls.page_size)
                page.on_disk = True
                engine._pages[page.key] = page
        engine.registry._next_id = payload["next_id"]
        engine._persist_catalog()
        return engine


class ScanQueue:
    """Shared work queue over one set's pages in sequence order.

    Consumers call next() to receive a pinned page (None once exhausted) and
    must release() it when done. Each page is delivered exactly once no
    matter how many consumers share the queue.
    """

    def __init__(self, engine: StorageEngine, set_id: int, seqs: list[int],
                 num_consumers: int):
        self._engine = engine
        self._set_id = set_id
        self._seqs = seqs
        self._pos = 0
        self._lock = threading.Lock()
        self.num_consumers = num_consumers

    def next(self) -> Page | None:
        while True:
            with self._lock:
                if self._pos >= len(self._seqs):
                    return None
                seq = self._seqs[self._pos]
                self._pos += 1
            try:
                return self._engine.pin_page((self._set_id, seq))
            except MissingImage:
                # write-back sets restarted from disk may have holes
                continue

    def release(self, page: Page, dirty: bool = False) -> None:
        self._engine.unpin_page(page, dirty)

    @property
    def exhausted(self) -> bool:
        with self._lock:
            return self._pos >= len(self._seqs)
