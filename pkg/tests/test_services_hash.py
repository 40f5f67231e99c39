from collections import Counter

import numpy as np
import pytest

from pangea.engine import EngineConfig, StorageEngine
from pangea.errors import InvalidArgs, KeyLargerThanPage
from pangea.locality import (
    CurrentOperation,
    Durability,
    ReadingPattern,
    WritingPattern,
)
from pangea.services import (
    VirtualHashBuffer,
    decode_u64,
    encode_u64,
    sum_u64_combine,
)

PAGE = 4096


def make_engine(tmp_path, pages=64) -> StorageEngine:
    return StorageEngine(EngineConfig(
        capacity=pages * PAGE,
        storage_dirs=[str(tmp_path / "store")],
        synthetic_io_clock=True,
        debug_checks=True,
    ))


def aggregate(engine, set_id, pairs, partitions=8) -> dict[bytes, int]:
    vhb = VirtualHashBuffer(engine, set_id, partitions, combine=sum_u64_combine)
    for k, v in pairs:
        vhb.upsert(k, encode_u64(v))
    out = {k: decode_u64(v) for k, v in vhb.finalize()}
    vhb.close()
    return out, vhb


def test_double_insert_sums(tmp_path):
    engine = make_engine(tmp_path)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    vhb = VirtualHashBuffer(engine, ls.set_id, 4, combine=sum_u64_combine)
    vhb.upsert(b"k", encode_u64(1))
    vhb.upsert(b"k", encode_u64(1))
    assert decode_u64(vhb.lookup(b"k")) == 2
    assert ls.attributes.writing_pattern is WritingPattern.RANDOM_MUTABLE_WRITE
    assert ls.attributes.reading_pattern is ReadingPattern.RANDOM_READ
    assert ls.attributes.current_operation is CurrentOperation.READ_AND_WRITE
    vhb.close()


def test_matches_reference_map_generous_memory(tmp_path):
    engine = make_engine(tmp_path, pages=128)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    rng = np.random.default_rng(3)
    pairs = [(b"k%06d" % rng.integers(0, 5000), 1) for _ in range(20_000)]
    reference = Counter()
    for k, _ in pairs:
        reference[k] += 1
    got, vhb = aggregate(engine, ls.set_id, pairs)
    assert got == dict(reference)
    assert vhb.spills == 0


def test_matches_reference_under_spill_pressure(tmp_path):
    engine = make_engine(tmp_path, pages=12)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    rng = np.random.default_rng(4)
    pairs = [(b"key%07d" % rng.integers(0, 40_000), 1) for _ in range(40_000)]
    reference = Counter()
    for k, _ in pairs:
        reference[k] += 1
    got, vhb = aggregate(engine, ls.set_id, pairs, partitions=4)
    assert vhb.spills >= 3
    assert got == dict(reference)
    assert engine.stats.pages_loaded > 0  # spill chains were read back


def test_zipf_duplicate_heavy(tmp_path):
    engine = make_engine(tmp_path, pages=16)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    rng = np.random.default_rng(5)
    keys = [b"z%08d" % v for v in rng.zipf(1.1, size=30_000)]
    reference = Counter(keys)
    got, _ = aggregate(engine, ls.set_id, [(k, 1) for k in keys], partitions=4)
    assert got == {k: c for k, c in reference.items()}


def test_finalize_merges_spill_chain_example(tmp_path):
    """Partition with spills holding {a:1} then {a:2}, live {a:4} -> (a,7)."""
    engine = make_engine(tmp_path)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    vhb = VirtualHashBuffer(engine, ls.set_id, 1, combine=sum_u64_combine)
    vhb.upsert(b"a", encode_u64(1))
    vhb._spill_largest()
    vhb.upsert(b"a", encode_u64(2))
    vhb._spill_largest()
    vhb.upsert(b"a", encode_u64(4))
    out = dict(vhb.finalize())
    assert decode_u64(out[b"a"]) == 7
    assert vhb.spills == 2
    vhb.close()


def test_no_spills_zero_reads(tmp_path):
    engine = make_engine(tmp_path)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    got, _ = aggregate(engine, ls.set_id, [(b"x", 1), (b"y", 2)], partitions=2)
    assert got == {b"x": 1, b"y": 2}
    assert engine.store.total_read_bytes == 0


def test_key_larger_than_page(tmp_path):
    engine = make_engine(tmp_path)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    vhb = VirtualHashBuffer(engine, ls.set_id, 1, combine=sum_u64_combine)
    with pytest.raises(KeyLargerThanPage):
        vhb.upsert(b"q" * (PAGE // 2), encode_u64(1))
    vhb.close()


def test_root_partitions_must_fit_pool(tmp_path):
    engine = make_engine(tmp_path, pages=4)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    with pytest.raises(InvalidArgs):
        VirtualHashBuffer(engine, ls.set_id, 100, combine=sum_u64_combine)


def test_split_keeps_all_keys_findable(tmp_path):
    engine = make_engine(tmp_path, pages=64)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    vhb = VirtualHashBuffer(engine, ls.set_id, 2, combine=sum_u64_combine)
    keys = [b"split%05d" % i for i in range(4000)]
    for k in keys:
        vhb.upsert(k, encode_u64(1))
    assert vhb.splits > 0
    for k in keys:
        assert vhb.lookup(k) is not None, k
    out = {k: decode_u64(v) for k, v in vhb.finalize()}
    assert out == {k: 1 for k in keys}
    vhb.close()


def test_key_count_preserved_with_200_partitions(tmp_path):
    engine = make_engine(tmp_path, pages=256)
    ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
    rng = np.random.default_rng(6)
    keys = {b"p%08d" % v for v in rng.integers(0, 10 ** 8, size=5000)}
    vhb = VirtualHashBuffer(engine, ls.set_id, 200, combine=sum_u64_combine)
    for k in keys:
        vhb.upsert(k, encode_u64(1))
    assert sum(1 for _ in vhb.finalize()) == len(keys)
    vhb.close()


def test_spill_event_sequence_is_deterministic(tmp_path):
    def run(workdir):
        engine = StorageEngine(EngineConfig(
            capacity=10 * PAGE, storage_dirs=[workdir],
            synthetic_io_clock=True))
        ls = engine.create_set("h", PAGE, Durability.WRITE_BACK)
        rng = np.random.default_rng(9)
        vhb = VirtualHashBuffer(engine, ls.set_id, 4, combine=sum_u64_combine)
        events = []
        orig_split, orig_spill = vhb._split, vhb._spill_largest

        def record_split(root, part, page):
            events.append(("split", part.page.key))
            return orig_split(root, part, page)

        def record_spill():
            events.append(("spill",))
            return orig_spill()

        vhb._split, vhb._spill_largest = record_split, record_spill
        for v in rng.integers(0, 30_000, size=30_000):
            vhb.upsert(b"d%08d" % v, encode_u64(1))
        vhb.close()
        return events

    a = run(str(tmp_path / "a"))
    b = run(str(tmp_path / "b"))
    assert a == b
    assert any(e[0] == "spill" for e in a)
