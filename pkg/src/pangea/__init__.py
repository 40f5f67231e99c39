"""pangea: an embeddable monolithic storage engine.

Locality sets carry durability, access-pattern, lifetime and recency
attributes; a unified buffer pool serves every set; the paging system picks
eviction victims by expected cost; services (sequential, shuffle, hash)
process records in place; placement builds heterogeneously partitioned
replica groups that double as failure recovery.
"""

from .allocator import AllocatorKind
from .buffer_pool import BufferPool, Page, create_pool
from .engine import EngineConfig, StorageEngine
from .errors import PangeaError
from .locality import (
    CurrentOperation,
    Durability,
    Lifetime,
    LocalitySet,
    ReadingPattern,
    ServiceKind,
    SetAttributes,
    WritingPattern,
)
from .paging import CostModelParams, WriteCostForm, make_policy
from .placement import (
    PartitionScheme,
    ReplicaGroup,
    expected_collisions,
    multi_failure_ratio,
    partition_set,
    recover_node,
    register_replica,
)
from .cluster import SimCluster, spawn_cluster
from .services import (
    SequentialScan,
    SequentialWriter,
    ShuffleService,
    VirtualHashBuffer,
)

__version__ = "0.1.0"

__all__ = [
    "AllocatorKind", "BufferPool", "Page", "create_pool",
    "EngineConfig", "StorageEngine", "PangeaError",
    "CurrentOperation", "Durability", "Lifetime", "LocalitySet",
    "ReadingPattern", "ServiceKind", "SetAttributes", "WritingPattern",
    "CostModelParams", "WriteCostForm", "make_policy",
    "PartitionScheme", "ReplicaGroup", "expected_collisions",
    "multi_failure_ratio", "partition_set", "recover_node", "register_replica",
    "SimCluster", "spawn_cluster",
    "SequentialScan", "SequentialWriter", "ShuffleService", "VirtualHashBuffer",
    "__version__",
]
