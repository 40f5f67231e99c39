"""Benchmark CLI: deterministic counter-based reproductions of the
sequential, shuffle, hash-aggregation and recovery micro-experiments.

All comparative claims are made on exact I/O counters (page loads, bytes
written/read, spill counts); wall time is reported but excluded from any
verification, so identical seed and config produce identical CSV rows.
Worker counts are simulated by deterministic round-robin interleaving of
logical writers, which keeps counters reproducible run to run.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .allocator import AllocatorKind
from .cluster import SimCluster
from .engine import EngineConfig, StorageEngine
from .errors import InvalidArgs, PolicyBlocked
from .hashing import stable_hash64
from .locality import Durability
from .paging import POLICY_NAMES, CostModelParams, WriteCostForm
from .placement import (
    PartitionScheme,
    partition_set,
    recover_node,
    register_replica,
)
from .services import (
    SequentialScan,
    SequentialWriter,
    ShuffleService,
    VirtualHashBuffer,
    decode_u64,
    encode_u64,
    sum_u64_combine,
)

CSV_COLUMNS = ["benchmark", "config", "phase", "status", "wall_seconds",
               "pages_loaded", "pages_evicted", "bytes_written", "bytes_read",
               "spills", "splits", "extra"]


@dataclass
class PhaseResult:
    name: str
    wall_seconds: float = 0.0
    pages_loaded: int = 0
    pages_evicted: int = 0
    bytes_written: int = 0
    bytes_read: int = 0
    spills: int = 0
    splits: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class BenchResult:
    benchmark: str
    config: dict
    phases: list[PhaseResult] = field(default_factory=list)
    status: str = "ok"
    verified: bool = True

    def config_echo(self) -> str:
        return " ".join(f"{k}={v}" for k, v in sorted(self.config.items()))

    def phase(self, name: str) -> PhaseResult:
        for p in self.phases:
            if p.name == name:
                return p
        raise KeyError(name)

    def total(self, attr: str) -> int:
        return sum(getattr(p, attr) for p in self.phases)


def _counters(engine: StorageEngine) -> dict:
    return {
        "pages_loaded": engine.stats.pages_loaded,
        "pages_evicted": engine.stats.pages_evicted,
        "bytes_written": engine.store.total_write_bytes,
        "bytes_read": engine.store.total_read_bytes,
        "spills": engine.stats.spills,
        "splits": engine.stats.splits,
    }


class _Phase:
    """Context manager recording counter deltas of one benchmark phase."""

    def __init__(self, result: BenchResult, engine: StorageEngine, name: str):
        self._result = result
        self._engine = engine
        self._name = name

    def __enter__(self):
        self._before = _counters(self._engine)
        self._t0 = time.perf_counter()
        self.extra: dict = {}
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            return False
        after = _counters(self._engine)
        self._result.phases.append(PhaseResult(
            name=self._name,
            wall_seconds=round(time.perf_counter() - self._t0, 6),
            extra=self.extra,
            **{k: after[k] - self._before[k] for k in after},
        ))
        return False


def _engine_for(cfg: dict, workdir: str) -> StorageEngine:
    dirs = cfg.get("storage_dirs") or [os.path.join(workdir, "store0")]
    params = CostModelParams(
        horizon_t=cfg.get("horizon", 1),
        use_linear_approx=cfg.get("linear_approx", False),
        write_cost_form=(WriteCostForm.DIVIDED_BY_VW
                         if cfg.get("write_cost_form", "times") == "divided"
                         else WriteCostForm.TIMES_VW),
    )
    return StorageEngine(EngineConfig(
        capacity=cfg["memory"],
        storage_dirs=dirs,
        allocator=(AllocatorKind.SLAB if cfg.get("allocator") == "slab"
                   else AllocatorKind.SEGREGATED_FIT),
        policy=cfg.get("policy", "data-aware"),
        cost_params=params,
        synthetic_io_clock=True,
    ))


def _seq_record(i: int, size: int) -> bytes:
    head = f"{i:016d}".encode()
    return head + b"x" * (size - len(head)) if size > 16 else head[:size]


# ---------------------------------------------------------------------------
# sequential read/write benchmark
# ---------------------------------------------------------------------------

def bench_seq(num_objects: int, object_size: int = 80,
              durability: str = "write-back", page_size: int = 64 * 1024,
              memory: int = 20 * 64 * 1024, policy: str = "data-aware",
              scans: int = 5, workdir: str | None = None, **cfg) -> BenchResult:
    config = dict(num_objects=num_objects, object_size=object_size,
                  durability=durability, page_size=page_size, memory=memory,
                  policy=policy, scans=scans)
    result = BenchResult("seq", config)
    workdir = workdir or tempfile.mkdtemp(prefix="pangea-bench-")
    engine = _engine_for({**cfg, **config}, workdir)
    dur = Durability.WRITE_BACK if durability == "write-back" else Durability.WRITE_THROUGH

    expected_sum = 0
    try:
        ls = engine.create_set("bench_seq", page_size, dur)
        with _Phase(result, engine, "write"):
            with SequentialWriter(engine, ls.set_id) as writer:
                for i in range(num_objects):
                    rec = _seq_record(i, object_size)
                    expected_sum += sum(rec)
                    writer.add_record(rec)
        for s in range(scans):
            with _Phase(result, engine, f"scan{s + 1}") as ph:
                got_sum = 0
                count = 0
                with SequentialScan(engine, ls.set_id, 1) as scan:
                    for rec in scan.iterators[0]:
                        got_sum += sum(rec)
                        count += 1
                ph.extra["records"] = count
                if count != num_objects or got_sum != expected_sum:
                    result.verified = False
        with _Phase(result, engine, "delete"):
            engine.mark_lifetime_ended(ls.set_id)
            engine.remove_set(ls.set_id)
    except PolicyBlocked as exc:
        result.status = f"blocked: {exc}"
    return result


def bench_paging_compare(policies: list[str] | None = None,
                         **kw) -> list[BenchResult]:
    out = []
    for policy in policies or list(POLICY_NAMES):
        out.append(bench_seq(policy=policy, **kw))
    return out


# ---------------------------------------------------------------------------
# shuffle benchmark
# ---------------------------------------------------------------------------

def _shuffle_keys(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(97, 123, size=(n, 10), dtype=np.uint8)


def bench_shuffle(writers: int = 4, readers: int = 4, partitions: int = 4,
                  mb_per_thread: float = 1.0, memory: int = 64 * 64 * 1024,
                  page_size: int = 64 * 1024, small_page: int = 16 * 1024,
                  policy: str = "data-aware", seed: int = 0,
                  workdir: str | None = None, **cfg) -> BenchResult:
    config = dict(writers=writers, readers=readers, partitions=partitions,
                  mb_per_thread=mb_per_thread, memory=memory,
                  page_size=page_size, small_page=small_page, policy=policy,
                  seed=seed)
    result = BenchResult("shuffle", config)
    workdir = workdir or tempfile.mkdtemp(prefix="pangea-bench-")
    engine = _engine_for({**cfg, **config}, workdir)

    n = int(mb_per_thread * 1024 * 1024 * writers) // 14  # 10B payload + frame
    keys = _shuffle_keys(n, seed)
    expected_sum = int(keys.sum())

    try:
        sets = {}
        for p in range(partitions):
            sets[p] = engine.create_set(f"part{p}", page_size,
                                        Durability.WRITE_BACK).set_id
        with _Phase(result, engine, "write") as ph:
            with ShuffleService(engine, sets, small_page_size=small_page) as svc:
                for i in range(n):
                    key = keys[i].tobytes()
                    pid = stable_hash64(key) % partitions
                    svc.buffer(i % writers, pid).add_record(key)
            ph.extra["records"] = n
        with _Phase(result, engine, "read") as ph:
            got_sum = 0
            count = 0
            for p in range(partitions):
                with SequentialScan(engine, sets[p], readers) as scan:
                    for it in scan.iterators:
                        for rec in it:
                            got_sum += sum(rec)
                            count += 1
            ph.extra["records"] = count
            if count != n or got_sum != expected_sum:
                result.verified = False
        spill_files = sum(1 for p in range(partitions)
                          if engine.store.get(sets[p]).write_bytes > 0)
        result.config["spill_files"] = spill_files
        if spill_files > partitions:
            result.verified = False
        with _Phase(result, engine, "delete"):
            for p in range(partitions):
                engine.mark_lifetime_ended(sets[p])
                engine.remove_set(sets[p])
    except PolicyBlocked as exc:
        result.status = f"blocked: {exc}"
    return result


# ---------------------------------------------------------------------------
# hash aggregation benchmark
# ---------------------------------------------------------------------------

def _hash_keys(n: int, seed: int, zipf_s: float | None) -> list[bytes]:
    rng = np.random.default_rng(seed)
    if zipf_s:
        vals = rng.zipf(zipf_s, size=n)
    else:
        vals = rng.integers(0, max(n, 1), size=n)
    return [b"k%09d" % int(v) for v in vals]


def bench_hash(num_keys: int = 100_000, partitions: int = 200,
               memory: int = 256 * 64 * 1024, page_size: int = 64 * 1024,
               policy: str = "data-aware", seed: int = 0,
               zipf_s: float | None = None, workdir: str | None = None,
               **cfg) -> BenchResult:
    config = dict(num_keys=num_keys, partitions=partitions, memory=memory,
                  page_size=page_size, policy=policy, seed=seed,
                  zipf_s=zipf_s or 0)
    result = BenchResult("hash-agg", config)
    workdir = workdir or tempfile.mkdtemp(prefix="pangea-bench-")
    engine = _engine_for({**cfg, **config}, workdir)

    keys = _hash_keys(num_keys, seed, zipf_s)
    reference = Counter()

    try:
        ls = engine.create_set("bench_hash", page_size, Durability.WRITE_BACK)
        one = encode_u64(1)
        with _Phase(result, engine, "upsert") as ph:
            vhb = VirtualHashBuffer(engine, ls.set_id, partitions,
                                    combine=sum_u64_combine)
            for key in keys:
                reference[key] += 1
                vhb.upsert(key, one)
            ph.extra["keys"] = num_keys
        with _Phase(result, engine, "finalize") as ph:
            got = {}
            for k, v in vhb.finalize():
                got[k] = decode_u64(v)
            vhb.close()
            ph.extra["distinct"] = len(got)
            if got != dict(reference):
                result.verified = False
        result.config["spills"] = vhb.spills
        result.config["splits"] = vhb.splits
        with _Phase(result, engine, "delete"):
            engine.mark_lifetime_ended(ls.set_id)
            engine.remove_set(ls.set_id)
    except PolicyBlocked as exc:
        result.status = f"blocked: {exc}"
    return result


# ---------------------------------------------------------------------------
# recovery drill
# ---------------------------------------------------------------------------

def bench_recovery(nodes: int = 3, objects: int = 900, seed: int = 0,
                   schemes: int = 2, fail_node: int = 0,
                   mem_per_worker: int = 64 * 64 * 1024,
                   page_size: int = 16 * 1024, workdir: str | None = None,
                   **cfg) -> BenchResult:
    if nodes < 2:
        raise InvalidArgs("recovery drill needs at least 2 nodes")
    if schemes < 2:
        raise InvalidArgs("recovery drill needs at least 2 schemes")
    config = dict(nodes=nodes, objects=objects, seed=seed, schemes=schemes,
                  fail_node=fail_node)
    result = BenchResult("recovery", config)
    rng = np.random.default_rng(seed)

    cluster = SimCluster(nodes, mem_per_worker, root=workdir,
                         policy=cfg.get("policy", "data-aware"))
    t0 = time.perf_counter()
    try:
        records = [rng.bytes(10) for _ in range(objects)]
        cluster.create_set("staging", page_size, Durability.WRITE_THROUGH)
        cluster.dispatch_data("staging", records, "round-robin")

        node_ids = cluster.alive_nodes()
        members = []
        for s in range(schemes):
            name = f"member{s}"
            cluster.create_set(name, page_size, Durability.WRITE_THROUGH)
            scheme = PartitionScheme.round_robin(
                scheme_id=s, num_partitions=nodes, nodes=node_ids,
                salt=rng.bytes(8))
            partition_set(cluster, "staging", name, scheme)
            members.append(name)
        group = register_replica(cluster, members[0], members[1])
        for extra in members[2:]:
            group = register_replica(cluster, members[0], extra)

        snapshot = Counter(records)
        cluster.fail_node(fail_node)

        restored = 0
        colliding_restored = 0
        verified = True
        for name in members:
            report = recover_node(cluster, group, name, fail_node)
            restored += report["objects_restored"]
            colliding_restored += report["colliding_restored"]
            verified = verified and report["verified"]
            post = Counter(rec for _, rec in cluster.read_all_records(name))
            verified = verified and post == snapshot
        result.verified = verified
        result.phases.append(PhaseResult(
            name="drill",
            wall_seconds=round(time.perf_counter() - t0, 6),
            extra={
                "objects_restored": restored,
                "colliding_count": group.colliding_count,
                "colliding_fraction": round(group.colliding_count / objects, 6),
                "colliding_restored": colliding_restored,
            },
        ))
    finally:
        cluster.cleanup()
    return result


# ---------------------------------------------------------------------------
# CSV + CLI
# ---------------------------------------------------------------------------

def write_csv(results: list[BenchResult], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in results:
            if not r.phases:
                w.writerow([r.benchmark, r.config_echo(), "-", r.status,
                            0.0, 0, 0, 0, 0, 0, 0, ""])
            for p in r.phases:
                extra = ";".join(f"{k}={v}" for k, v in sorted(p.extra.items()))
                w.writerow([r.benchmark, r.config_echo(), p.name, r.status,
                            p.wall_seconds, p.pages_loaded, p.pages_evicted,
                            p.bytes_written, p.bytes_read, p.spills, p.splits,
                            extra])


def _load_config_file(path: str) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(parser_defaults: dict, overrides: dict) -> dict:
    """Coerce config-file strings to the type of the argparse default."""
    out = {}
    for k, v in overrides.items():
        ref = parser_defaults.get(k)
        if isinstance(ref, bool):
            out[k] = v.lower() in ("1", "true", "yes")
        elif isinstance(ref, int):
            out[k] = int(v)
        elif isinstance(ref, float):
            out[k] = float(v)
        else:
            out[k] = v
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--memory", type=int, default=0, help="pool bytes")
    p.add_argument("--page-size", type=int, default=64 * 1024)
    p.add_argument("--policy", choices=list(POLICY_NAMES), default="data-aware")
    p.add_argument("--allocator", choices=["segregated-fit", "slab"],
                   default="segregated-fit")
    p.add_argument("--storage-dirs", default="",
                   help="comma separated stripe directories")
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--linear-approx", action="store_true")
    p.add_argument("--write-cost-form", choices=["divided", "times"],
                   default="times")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--desk", action="store_true",
                   help="shrink the workload to desk scale")
    p.add_argument("--config", default="", help="key=value config file")
    p.add_argument("--out", default="results.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pangea-bench",
        description="Counter-based storage engine benchmarks (CSV output).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("seq", help="sequential write, N scans, delete")
    _add_common(p)
    p.add_argument("--num-objects", type=int, default=1_000_000)
    p.add_argument("--object-size", type=int, default=80)
    p.add_argument("--durability", choices=["write-back", "write-through"],
                   default="write-back")
    p.add_argument("--scans", type=int, default=5)

    p = sub.add_parser("paging-compare", help="seq workload across policies")
    _add_common(p)
    p.add_argument("--num-objects", type=int, default=1_000_000)
    p.add_argument("--object-size", type=int, default=80)
    p.add_argument("--durability", choices=["write-back", "write-through"],
                   default="write-back")
    p.add_argument("--scans", type=int, default=5)
    p.add_argument("--policies", default=",".join(POLICY_NAMES))

    p = sub.add_parser("shuffle", help="hash-routed shuffle write and read")
    _add_common(p)
    p.add_argument("--writers", type=int, default=4)
    p.add_argument("--readers", type=int, default=4)
    p.add_argument("--partitions", type=int, default=4)
    p.add_argument("--mb-per-thread", type=float, default=16.0)
    p.add_argument("--small-page", type=int, default=16 * 1024)

    p = sub.add_parser("hash-agg", help="string/int aggregation with spilling")
    _add_common(p)
    p.add_argument("--num-keys", type=int, default=1_000_000)
    p.add_argument("--partitions", type=int, default=200)
    p.add_argument("--zipf", type=float, default=0.0,
                   help="Zipf exponent for duplicate-heavy keys (0 = uniform)")

    p = sub.add_parser("recovery-drill", help="replica group failure recovery")
    _add_common(p)
    p.add_argument("--nodes", type=int, default=3)
    p.add_argument("--objects", type=int, default=900)
    p.add_argument("--schemes", type=int, default=2)
    p.add_argument("--fail-node", type=int, default=0)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", ""):
        overrides = _load_config_file(args.config)
        coerced = _coerce(vars(args), overrides)
        # CLI flags win: re-parse with file values as defaults
        parser.set_defaults(**coerced)
        args = parser.parse_args(argv)
    return args


def _desk_scale(args: argparse.Namespace) -> None:
    """Shrink to a configuration that runs in seconds."""
    args.page_size = min(args.page_size, 64 * 1024)
    if args.command in ("seq", "paging-compare"):
        args.num_objects = min(args.num_objects, 19_500)
    if args.command == "shuffle":
        args.mb_per_thread = min(args.mb_per_thread, 0.25)
    if args.command == "hash-agg":
        args.num_keys = min(args.num_keys, 100_000)
        args.partitions = min(args.partitions, 50)
    if args.command == "recovery-drill":
        args.objects = min(args.objects, 900)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = _apply_config_file(parser, list(argv) if argv is not None else sys.argv[1:])
    if args.desk:
        _desk_scale(args)

    storage_dirs = [d for d in args.storage_dirs.split(",") if d]
    common = dict(
        page_size=args.page_size,
        policy=args.policy,
        allocator=args.allocator,
        storage_dirs=storage_dirs or None,
        horizon=args.horizon,
        linear_approx=args.linear_approx,
        write_cost_form=args.write_cost_form,
        seed=args.seed,
    )

    if args.memory <= 0:
        args.memory = 20 * args.page_size

    if args.command == "seq":
        results = [bench_seq(
            num_objects=args.num_objects, object_size=args.object_size,
            durability=args.durability, memory=args.memory, scans=args.scans,
            **common)]
    elif args.command == "paging-compare":
        results = bench_paging_compare(
            policies=[p for p in args.policies.split(",") if p],
            num_objects=args.num_objects, object_size=args.object_size,
            durability=args.durability, memory=args.memory, scans=args.scans,
            **{k: v for k, v in common.items() if k != "policy"})
    elif args.command == "shuffle":
        results = [bench_shuffle(
            writers=args.writers, readers=args.readers,
            partitions=args.partitions, mb_per_thread=args.mb_per_thread,
            memory=args.memory, small_page=args.small_page, **common)]
    elif args.command == "hash-agg":
        results = [bench_hash(
            num_keys=args.num_keys, partitions=args.partitions,
            memory=args.memory, zipf_s=args.zipf or None, **common)]
    elif args.command == "recovery-drill":
        results = [bench_recovery(
            nodes=args.nodes, objects=args.objects, seed=args.seed,
            schemes=args.schemes, fail_node=args.fail_node,
            page_size=args.page_size)]
    else:  # pragma: no cover
        parser.error(f"unknown command {args.command}")

    write_csv(results, args.out)
    failures = [r for r in results if not r.verified]
    for r in results:
        line = f"{r.benchmark}: status={r.status} verified={r.verified}"
        print(line)
    print(f"wrote {args.out}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
