"""In-process multi-node harness: one manager catalog plus N worker nodes.

Each worker owns a private buffer pool, file store and stripe directories;
nodes never share pools. Cross-node movement happens only through
page-granularity transfer buffers, so a networked backend could be swapped
in behind the same API. Node failure drops the pool and (in drill mode) the
node's disk state as a worst case.
"""

from __future__ import annotations

import os
import random
import shutil
import tempfile
from dataclasses import dataclass, field
from typing import Optional

from .engine import EngineConfig, StorageEngine
from .errors import (
    InsufficientDiskSpace,
    InvalidArgs,
    NodeDown,
    SetNotFound,
    UnknownNode,
)
from .locality import Durability
from .services import SequentialScan, SequentialWriter


@dataclass
class CatalogEntry:
    name: str
    page_size: int
    durability: Durability
    partition_scheme: Optional[object] = None
    replica_group: Optional[int] = None


class ManagerCatalog:
    """Set metadata held by the manager; survives any worker failure."""

    def __init__(self):
        self._entries: dict[str, CatalogEntry] = {}

    def add(self, entry: CatalogEntry) -> None:
        self._entries[entry.name] = entry

    def get(self, name: str) -> CatalogEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise SetNotFound(name) from None

    def remove(self, name: str) -> None:
        self._entries.pop(name, None)

    def names(self) -> list[str]:
        return list(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries


class SimNode:
    def __init__(self, node_id: int, root_dir: str, mem: int, dirs: int,
                 policy: str, synthetic_clock: bool):
        self.node_id = node_id
        self.root_dir = root_dir
        self._mem = mem
        self._dirs = dirs
        self._policy = policy
        self._synthetic = synthetic_clock
        self.alive = True
        self.pages_sent = 0
        self.pages_received = 0
        self.engine = self._fresh_engine()

    def _stripe_dirs(self) -> list[str]:
        return [os.path.join(self.root_dir, f"disk{d}") for d in range(self._dirs)]

    def _fresh_engine(self) -> StorageEngine:
        return StorageEngine(EngineConfig(
            capacity=self._mem,
            storage_dirs=self._stripe_dirs(),
            policy=self._policy,
            synthetic_io_clock=self._synthetic,
        ))

    def check_alive(self) -> None:
        if not self.alive:
            raise NodeDown(f"node {self.node_id} is down")

    def fail(self, destroy_disk: bool) -> None:
        self.alive = False
        self.engine = None
        if destroy_disk:
            shutil.rmtree(self.root_dir, ignore_errors=True)
            os.makedirs(self.root_dir, exist_ok=True)

    def restart(self, preserve_disk: bool) -> None:
        self.alive = True
        if preserve_disk:
            self.engine = StorageEngine.open(EngineConfig(
                capacity=self._mem,
                storage_dirs=self._stripe_dirs(),
                policy=self._policy,
                synthetic_io_clock=self._synthetic,
            ))
        else:
            self.engine = self._fresh_engine()


class _TransferBuffer:
    """Batches records into page-sized messages between two nodes."""

    def __init__(self, cluster: "SimCluster", src: int, dst: int, set_name: str,
                 page_size: int):
        self._cluster = cluster
        self._src = src
        self._dst = dst
        self._set_name = set_name
        self._budget = page_size
        self._records: list[bytes] = []
        self._bytes = 0

    def add(self, record: bytes) -> None:
        self._records.append(record)
        self._bytes += len(record) + 4
        if self._bytes >= self._budget:
            self.flush()

    def flush(self) -> None:
        if not self._records:
            return
        self._cluster._deliver(self._src, self._dst, self._set_name, self._records)
        self._records = []
        self._bytes = 0


class SimCluster:
    def __init__(self, num_workers: int, mem_per_worker: int,
                 dirs_per_worker: int = 1, root: str | None = None,
                 policy: str = "data-aware", synthetic_clock: bool = True,
                 drill_destroys_disk: bool = True,
                 min_free_disk: int | None = None):
        if num_workers < 1:
            raise InvalidArgs("num_workers must be >= 1")
        self.root = root or tempfile.mkdtemp(prefix="pangea-cluster-")
        os.makedirs(self.root, exist_ok=True)
        required = min_free_disk if min_free_disk is not None \
            else num_workers * mem_per_worker
        stat = os.statvfs(self.root)
        if stat.f_bavail * stat.f_frsize < required:
            raise InsufficientDiskSpace(
                f"need {required} bytes under {self.root}"
            )
        self.drill_destroys_disk = drill_destroys_disk
        self.catalog = ManagerCatalog()
        self.nodes = [
            SimNode(i, os.path.join(self.root, f"node{i}"), mem_per_worker,
                    dirs_per_worker, policy, synthetic_clock)
            for i in range(num_workers)
        ]
        self.groups: dict[int, object] = {}
        self._next_group_id = 0
        # open writers per (node, set) during bulk operations
        self._writers: dict[tuple[int, str], SequentialWriter] = {}

    # ------------------------------------------------------------------ #

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> SimNode:
        if not 0 <= node_id < len(self.nodes):
            raise UnknownNode(node_id)
        return self.nodes[node_id]

    def alive_nodes(self) -> list[int]:
        return [n.node_id for n in self.nodes if n.alive]

    def failed_nodes(self) -> list[int]:
        return [n.node_id for n in self.nodes if not n.alive]

    # ------------------------------------------------------------------ #
    # set management

    def create_set(self, name: str, page_size: int,
                   durability: Durability = Durability.WRITE_THROUGH) -> CatalogEntry:
        for node in self.nodes:
            node.check_alive()
        for node in self.nodes:
            node.engine.create_set(name, page_size, durability)
        entry = CatalogEntry(name, page_size, durability)
        self.catalog.add(entry)
        return entry

    def remove_set(self, name: str) -> None:
        entry = self.catalog.get(name)
        for node in self.nodes:
            if node.alive and self._node_has_set(node, name):
                node.engine.remove_set(node.engine.get_set(name).set_id)
        self.catalog.remove(entry.name)

    def _node_has_set(self, node: SimNode, name: str) -> bool:
        try:
            node.engine.get_set(name)
            return True
        except SetNotFound:
            return False

    def _ensure_local_set(self, node: SimNode, name: str) -> None:
        if not self._node_has_set(node, name):
            entry = self.catalog.get(name)
            node.engine.create_set(name, entry.page_size, entry.durability)

    # ------------------------------------------------------------------ #
    # data movement

    def dispatch_data(self, name: str, records, strategy: str = "round-robin",
                      seed: int = 0) -> None:
        """Write records across nodes; 'round-robin' or 'random' placement."""
        entry = self.catalog.get(name)
        rng = random.Random(seed)
        k = len(self.nodes)
        try:
            for i, record in enumerate(records):
                if strategy == "round-robin":
                    nid = i % k
                elif strategy == "random":
                    nid = rng.randrange(k)
                else:
                    raise InvalidArgs(f"unknown dispatch strategy {strategy!r}")
                self._write_local(nid, entry.name, record)
        finally:
            self.close_writers()

    def _write_local(self, node_id: int, set_name: str, record: bytes) -> None:
        node = self.node(node_id)
        node.check_alive()
        self._ensure_local_set(node, set_name)
        key = (node_id, set_name)
        writer = self._writers.get(key)
        if writer is None:
            writer = SequentialWriter(
                node.engine, node.engine.get_set(set_name).set_id)
            self._writers[key] = writer
        writer.add_record(record)

    def close_writers(self) -> None:
        for writer in self._writers.values():
            writer.close()
        self._writers.clear()

    def _deliver(self, src: int, dst: int, set_name: str, records: list) -> None:
        """One page-granularity message from src to dst."""
        src_node = self.node(src)
        dst_node = self.node(dst)
        dst_node.check_alive()
        for record in records:
            self._write_local(dst, set_name, record)
        if src != dst:
            src_node.pages_sent += 1
            dst_node.pages_received += 1

    def transfer_buffer(self, src: int, dst: int, set_name: str) -> _TransferBuffer:
        entry = self.catalog.get(set_name)
        return _TransferBuffer(self, src, dst, set_name, entry.page_size)

    # ------------------------------------------------------------------ #
    # reads

    def read_node_records(self, name: str, node_id: int) -> list[bytes]:
        node = self.node(node_id)
        node.check_alive()
        if not self._node_has_set(node, name):
            return []
        ls = node.engine.get_set(name)
        with SequentialScan(node.engine, ls.set_id, 1) as scan:
            return list(scan.iterators[0])

    def read_all_records(self, name: str) -> list[tuple[int, bytes]]:
        out = []
        for node in self.nodes:
            if not node.alive:
                continue
            for record in self.read_node_records(name, node.node_id):
                out.append((node.node_id, record))
        return out

    # ------------------------------------------------------------------ #
    # failure injection

    def fail_node(self, node_id: int) -> None:
        self.node(node_id).fail(self.drill_destroys_disk)

    def restart_node(self, node_id: int) -> None:
        self.node(node_id).restart(preserve_disk=not self.drill_destroys_disk)

    def cleanup(self) -> None:
        shutil.rmtree(self.root, ignore_errors=True)


def spawn_cluster(num_workers: int, mem_per_worker: int, dirs_per_worker: int = 1,
                  **kwargs) -> SimCluster:
    return SimCluster(num_workers, mem_per_worker, dirs_per_worker, **kwargs)
