"""Partitioning, heterogeneous replica groups, colliding objects, recovery.

Members of a replica group hold the same object multiset under different
partition schemes, serving both query locality and failure recovery. Objects
whose copies all land on one node ("colliding") are materialized into a side
set replicated across two nodes, which is what makes single-node failure
fully recoverable.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import (
    InvalidArgs,
    NoSurvivingReplica,
    ObjectSetMismatch,
    TargetNotEmpty,
    UnrecoverableObjects,
)
from .hashing import stable_hash64
from .locality import Durability
from .services import ShuffleService

FULL_VERIFY_THRESHOLD = 10 ** 6
SAMPLE_RATE = 0.01


@dataclass
class PartitionScheme:
    scheme_id: int
    num_partitions: int
    partition_map: dict[int, int]
    salt: bytes = b""
    key_extractor: Optional[Callable[[bytes], bytes]] = None

    def __post_init__(self):
        if self.num_partitions < 1:
            raise InvalidArgs("num_partitions must be positive")
        missing = [p for p in range(self.num_partitions) if p not in self.partition_map]
        if missing:
            raise InvalidArgs(f"partition_map is missing partitions {missing[:5]}")

    def key_of(self, record: bytes) -> bytes:
        return record if self.key_extractor is None else self.key_extractor(record)

    def partition_of(self, record: bytes) -> int:
        return stable_hash64(self.key_of(record), self.salt) % self.num_partitions

    def node_of(self, record: bytes) -> int:
        return self.partition_map[self.partition_of(record)]

    @classmethod
    def round_robin(cls, scheme_id: int, num_partitions: int, nodes: list[int],
                    salt: bytes = b"", key_extractor=None) -> "PartitionScheme":
        pmap = {p: nodes[p % len(nodes)] for p in range(num_partitions)}
        return cls(scheme_id, num_partitions, pmap, salt, key_extractor)


@dataclass
class ReplicaGroup:
    group_id: int
    members: list[str]                       # set names, registration order
    colliding_set: str
    colliding_nodes: list[int]
    colliding_count: int = 0


# ---------------------------------------------------------------------------
# closed-form estimates
# ---------------------------------------------------------------------------

def expected_collisions(n: float, k: int) -> float:
    """Expected colliding objects for n objects over k nodes under random
    placement schemes."""
    if n < 0 or k < 1:
        raise InvalidArgs(f"need n >= 0 and k >= 1, got n={n}, k={k}")
    return n / k


def multi_failure_ratio(k: int, r: int) -> float:
    """Fraction of objects spanning fewer than r+1 nodes under random
    placement: 1 - (k * (k-1) * ... * (k-r)) / k^(r+1)."""
    if not (1 <= r < k):
        raise InvalidArgs(f"need 1 <= r < k, got k={k}, r={r}")
    prod = 1
    for i in range(r + 1):
        prod *= (k - i)
    return 1.0 - prod / (k ** (r + 1))


def count_collisions(records, schemes: list[PartitionScheme]) -> int:
    """Objects whose copies land on a single node across all schemes."""
    n = 0
    for r in records:
        first = schemes[0].node_of(r)
        if all(s.node_of(r) == first for s in schemes[1:]):
            n += 1
    return n


# ---------------------------------------------------------------------------
# cluster-level operations
# ---------------------------------------------------------------------------

def partition_set(cluster, source_name: str, target_name: str,
                  scheme: PartitionScheme) -> None:
    """Repartition every source record into the target set via the shuffle
    service on each destination node, preserving the object multiset."""
    cluster.catalog.get(source_name)
    target_entry = cluster.catalog.get(target_name)
    for nid in cluster.alive_nodes():
        node = cluster.node(nid)
        if cluster._node_has_set(node, target_name):
            if node.engine.get_set(target_name).pages:
                raise TargetNotEmpty(target_name)

    page_size = target_entry.page_size
    small = page_size if (page_size < 16384 or page_size % 4) else page_size // 4

    services: dict[int, ShuffleService] = {}

    def service_for(nid: int) -> ShuffleService:
        if nid not in services:
            node = cluster.node(nid)
            node.check_alive()
            cluster._ensure_local_set(node, target_name)
            set_id = node.engine.get_set(target_name).set_id
            pids = [p for p, n in scheme.partition_map.items() if n == nid]
            services[nid] = ShuffleService(
                node.engine, {p: set_id for p in pids}, small_page_size=small)
        return services[nid]

    # page-granularity batches per (src, dst) pair
    batches: dict[tuple[int, int], list[tuple[int, bytes]]] = {}
    batch_bytes: dict[tuple[int, int], int] = {}

    def flush(src: int, dst: int) -> None:
        batch = batches.pop((src, dst), None)
        if not batch:
            return
        svc = service_for(dst)
        for pid, record in batch:
            svc.buffer(src, pid).add_record(record)
        if src != dst:
            cluster.node(src).pages_sent += 1
            cluster.node(dst).pages_received += 1
        batch_bytes[(src, dst)] = 0

    try:
        for src in cluster.alive_nodes():
            for record in cluster.read_node_records(source_name, src):
                pid = scheme.partition_of(record)
                dst = scheme.partition_map[pid]
                if dst == src:
                    service_for(dst).buffer(src, pid).add_record(record)
                    continue
                key = (src, dst)
                batches.setdefault(key, []).append((pid, record))
                batch_bytes[key] = batch_bytes.get(key, 0) + len(record) + 4
                if batch_bytes[key] >= page_size:
                    flush(src, dst)
        for src, dst in list(batches):
            flush(src, dst)
    finally:
        for svc in services.values():
            svc.close()

    target_entry.partition_scheme = scheme
    for nid in cluster.alive_nodes():
        node = cluster.node(nid)
        if cluster._node_has_set(node, target_name):
            node.engine.get_set(target_name).partition_scheme = scheme


def _member_counter(cluster, name: str) -> Counter:
    return Counter(rec for _, rec in cluster.read_all_records(name))


def _member_locations(cluster, name: str) -> dict[bytes, set[int]]:
    """Physical copy locations per object value; used for scheme-less members."""
    locs: dict[bytes, set[int]] = {}
    for nid, rec in cluster.read_all_records(name):
        locs.setdefault(rec, set()).add(nid)
    return locs


def _verify_same_objects(source: Counter, target: Counter) -> None:
    total = max(sum(source.values()), sum(target.values()))
    if total < FULL_VERIFY_THRESHOLD:
        if source != target:
            raise ObjectSetMismatch(
                f"member multisets differ ({sum(source.values())} vs "
                f"{sum(target.values())} objects)"
            )
        return
    # sampled check above the threshold: 1% of distinct values by hash order
    sampled = [v for v in source if stable_hash64(v) % 100 == 0]
    for v in sampled:
        if source[v] != target[v]:
            raise ObjectSetMismatch(f"sampled value count differs for {v!r}")


def register_replica(cluster, source_name: str, target_name: str,
                     scheme: PartitionScheme | None = None) -> ReplicaGroup:
    """Place source and target in one replica group, verify object equality,
    and materialize colliding objects into a replicated side set."""
    source_entry = cluster.catalog.get(source_name)
    target_entry = cluster.catalog.get(target_name)
    if scheme is not None:
        target_entry.partition_scheme = scheme

    if source_entry.replica_group is not None:
        group: ReplicaGroup = cluster.groups[source_entry.replica_group]
        members = group.members + [target_name]
    else:
        group = None
        members = [source_name, target_name]

    counters = {m: _member_counter(cluster, m) for m in members}
    base = counters[members[0]]
    for m in members[1:]:
        _verify_same_objects(base, counters[m])

    # copy locations per member: scheme-driven when available, physical otherwise
    locations: dict[str, dict] = {}
    for m in members:
        entry = cluster.catalog.get(m)
        if entry.partition_scheme is not None:
            locations[m] = entry.partition_scheme
        else:
            locations[m] = _member_locations(cluster, m)

    def locs_of(member: str, value: bytes) -> set[int]:
        src = locations[member]
        if isinstance(src, PartitionScheme):
            return {src.node_of(value)}
        return src.get(value, set())

    colliding = Counter()
    for value, count in base.items():
        union = set()
        for m in members:
            union |= locs_of(m, value)
        if len(union) == 1:
            colliding[value] = count

    gid = group.group_id if group else cluster._next_group_id
    if group is None:
        cluster._next_group_id += 1
    colliding_name = f"__colliding_{gid}"

    # rewrite the side set from scratch (idempotent for group extension)
    if colliding_name in cluster.catalog:
        cluster.remove_set(colliding_name)
    cluster.create_set(colliding_name, source_entry.page_size,
                       Durability.WRITE_THROUGH)
    load = Counter()
    for nid, _ in cluster.read_all_records(source_name):
        load[nid] += 1
    alive = cluster.alive_nodes()
    replica_nodes = sorted(alive, key=lambda n: (load.get(n, 0), n))[:min(2, len(alive))]
    for nid in replica_nodes:
        for value, count in colliding.items():
            for _ in range(count):
                cluster._write_local(nid, colliding_name, value)
    cluster.close_writers()

    new_group = ReplicaGroup(
        group_id=gid,
        members=members,
        colliding_set=colliding_name,
        colliding_nodes=replica_nodes,
        colliding_count=sum(colliding.values()),
    )
    cluster.groups[gid] = new_group
    for m in members:
        cluster.catalog.get(m).replica_group = gid
    return new_group


def recover_node(cluster, group: ReplicaGroup, target_name: str,
                 failed_node: int, verify: bool = True) -> dict:
    """Restore the target member after a single-node failure.

    Lost partitions are taken over round-robin by survivors; the target's
    partitioner runs over a surviving source replica to re-dispatch lost
    records, and colliding objects come back from the side set.
    """
    failed = cluster.failed_nodes()
    if failed != [failed_node]:
        raise InvalidArgs(f"expected exactly node {failed_node} failed, saw {failed}")
    if len(group.members) < 2:
        raise NoSurvivingReplica(f"group {group.group_id} has a single member")
    if target_name not in group.members:
        raise InvalidArgs(f"{target_name} is not a member of group {group.group_id}")

    alive = cluster.alive_nodes()
    surviving = {m: _member_counter(cluster, m) for m in group.members}
    # the side set is replicated; read exactly one surviving copy
    colliding_node = next((n for n in group.colliding_nodes if n in alive), None)
    colliding_counter = (
        Counter(cluster.read_node_records(group.colliding_set, colliding_node))
        if colliding_node is not None else Counter()
    )

    # ground truth: each member either kept all copies of a value or none,
    # and fully lost values must live in the colliding set
    ground = Counter()
    for m in group.members:
        for v, c in surviving[m].items():
            if c > ground[v]:
                ground[v] = c
    for v, c in colliding_counter.items():
        if c > ground[v]:
            ground[v] = c

    needed = ground - surviving[target_name]

    target_scheme: PartitionScheme | None = cluster.catalog.get(target_name).partition_scheme
    lost_pids: list[int] = []
    if target_scheme is not None:
        lost_pids = sorted(p for p, n in target_scheme.partition_map.items()
                           if n == failed_node)
        for i, pid in enumerate(lost_pids):
            target_scheme.partition_map[pid] = alive[i % len(alive)]

    source_name = next(m for m in group.members if m != target_name)
    others = [m for m in group.members if m not in (target_name, source_name)]

    objects_restored = 0
    colliding_restored = 0
    rr = itertools.cycle(alive)
    for value, count in needed.items():
        if surviving[source_name].get(value, 0) >= count:
            pass
        elif colliding_counter.get(value, 0) >= count:
            colliding_restored += count
        elif any(surviving[m].get(value, 0) >= count for m in others):
            pass
        else:
            raise UnrecoverableObjects(
                f"no surviving copy of a {len(value)}-byte object"
            )
        if target_scheme is not None:
            dest = target_scheme.node_of(value)
        else:
            dest = next(rr)
        for _ in range(count):
            cluster._write_local(dest, target_name, value)
        objects_restored += count
    cluster.close_writers()

    verified = True
    if verify:
        verified = _member_counter(cluster, target_name) == ground

    return {
        "objects_restored": objects_restored,
        "source_replica": source_name,
        "colliding_restored": colliding_restored,
        "lost_partitions": len(lost_pids),
        "verified": verified,
    }
