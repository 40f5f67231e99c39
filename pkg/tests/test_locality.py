import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pangea.errors import (
    DuplicateName,
    LifetimeEndedError,
    PageSizeExceedsPool,
    SetNotFound,
)
from pangea.locality import (
    CurrentOperation,
    Durability,
    Lifetime,
    ReadingPattern,
    ServiceKind,
    SetRegistry,
    WritingPattern,
)

MIB = 1024 * 1024


@pytest.fixture
def reg():
    return SetRegistry(pool_capacity=256 * MIB)


def test_create_set_fresh(reg):
    ls = reg.create_set("data", 64 * MIB, Durability.WRITE_BACK)
    assert ls.pages == []
    assert ls.attributes.durability is Durability.WRITE_BACK
    assert ls.attributes.writing_pattern is WritingPattern.NONE
    assert ls.attributes.reading_pattern is ReadingPattern.NONE
    assert ls.attributes.lifetime is Lifetime.ALIVE
    assert ls.attributes.current_operation is CurrentOperation.NONE


def test_duplicate_name(reg):
    reg.create_set("data", 64 * MIB, Durability.WRITE_BACK)
    with pytest.raises(DuplicateName):
        reg.create_set("data", 64 * MIB, Durability.WRITE_BACK)


def test_page_size_exceeds_pool(reg):
    with pytest.raises(PageSizeExceedsPool):
        reg.create_set("x", 512 * MIB, Durability.WRITE_THROUGH)
    with pytest.raises(PageSizeExceedsPool):
        reg.create_set("y", 0, Durability.WRITE_THROUGH)


def test_seed_profiles_positive(reg):
    ls = reg.create_set("data", 64 * MIB, Durability.WRITE_BACK)
    assert ls.profiled_v_r > 0
    assert ls.profiled_v_w > 0


def test_infer_seq_write(reg):
    ls = reg.create_set("s", MIB, Durability.WRITE_BACK)
    attrs = reg.attach_service(ls.set_id, ServiceKind.SEQ_WRITE)
    assert attrs.writing_pattern is WritingPattern.SEQUENTIAL_WRITE
    assert attrs.current_operation is CurrentOperation.WRITE


def test_infer_hash_both_patterns(reg):
    ls = reg.create_set("h", MIB, Durability.WRITE_BACK)
    attrs = reg.attach_service(ls.set_id, ServiceKind.HASH)
    assert attrs.writing_pattern is WritingPattern.RANDOM_MUTABLE_WRITE
    assert attrs.reading_pattern is ReadingPattern.RANDOM_READ
    assert attrs.current_operation is CurrentOperation.READ_AND_WRITE


def test_infer_shuffle(reg):
    ls = reg.create_set("sh", MIB, Durability.WRITE_BACK)
    attrs = reg.attach_service(ls.set_id, ServiceKind.SHUFFLE)
    assert attrs.writing_pattern is WritingPattern.CONCURRENT_WRITE
    assert attrs.current_operation is CurrentOperation.WRITE


def test_seq_read_after_write_detached(reg):
    ls = reg.create_set("s", MIB, Durability.WRITE_THROUGH)
    reg.attach_service(ls.set_id, ServiceKind.SEQ_WRITE)
    reg.detach_service(ls.set_id, ServiceKind.SEQ_WRITE)
    attrs = reg.attach_service(ls.set_id, ServiceKind.SEQ_READ)
    assert attrs.reading_pattern is ReadingPattern.SEQUENTIAL_READ
    assert attrs.current_operation is CurrentOperation.READ
    # historical writing pattern is kept
    assert attrs.writing_pattern is WritingPattern.SEQUENTIAL_WRITE


def test_read_and_write_when_both_attached(reg):
    ls = reg.create_set("s", MIB, Durability.WRITE_THROUGH)
    reg.attach_service(ls.set_id, ServiceKind.SEQ_WRITE)
    attrs = reg.attach_service(ls.set_id, ServiceKind.SEQ_READ)
    assert attrs.current_operation is CurrentOperation.READ_AND_WRITE
    # detaching the read side downgrades to write
    attrs = reg.detach_service(ls.set_id, ServiceKind.SEQ_READ)
    assert attrs.current_operation is CurrentOperation.WRITE
    attrs = reg.detach_service(ls.set_id, ServiceKind.SEQ_WRITE)
    assert attrs.current_operation is CurrentOperation.NONE


def test_attach_to_ended_set_fails(reg):
    ls = reg.create_set("s", MIB, Durability.WRITE_BACK)
    reg.mark_lifetime_ended(ls.set_id)
    with pytest.raises(LifetimeEndedError):
        reg.attach_service(ls.set_id, ServiceKind.SEQ_WRITE)


def test_lifetime_ended_idempotent(reg):
    ls = reg.create_set("s", MIB, Durability.WRITE_BACK)
    reg.mark_lifetime_ended(ls.set_id)
    reg.mark_lifetime_ended(ls.set_id)
    assert ls.attributes.lifetime is Lifetime.LIFETIME_ENDED


def test_record_access_monotone(reg):
    ls = reg.create_set("s", MIB, Durability.WRITE_BACK)
    reg.record_access(ls.set_id, 10)
    reg.record_access(ls.set_id, 7)
    assert ls.attributes.access_recency == 10
    reg.record_access(ls.set_id, 11)
    assert ls.attributes.access_recency == 11


def test_unknown_set(reg):
    with pytest.raises(SetNotFound):
        reg.record_access(999, 1)
    with pytest.raises(SetNotFound):
        reg.get(999)


def test_read_penalty_follows_pattern(reg):
    ls = reg.create_set("s", MIB, Durability.WRITE_BACK)
    assert ls.read_penalty_w_r == 1.0
    reg.attach_service(ls.set_id, ServiceKind.HASH)
    assert ls.read_penalty_w_r == 2.0
    ls.random_read_penalty = 3.5
    assert ls.read_penalty_w_r == 3.5


def test_stats_map(reg):
    ls = reg.create_set("db.table", MIB, Durability.WRITE_THROUGH)
    info = reg.stats_map()["db.table"]
    assert info["set_id"] == ls.set_id
    assert info["durability"] == "write-through"


# expected attribute machine, written independently for the property test
_EXPECT_PATTERNS = {
    ServiceKind.SEQ_WRITE: ("writing", WritingPattern.SEQUENTIAL_WRITE),
    ServiceKind.SHUFFLE: ("writing", WritingPattern.CONCURRENT_WRITE),
    ServiceKind.SEQ_READ: ("reading", ReadingPattern.SEQUENTIAL_READ),
}


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.sampled_from(list(ServiceKind))),
                max_size=24))
def test_attribute_vector_is_pure_function_of_history(ops):
    reg = SetRegistry(pool_capacity=MIB)
    ls = reg.create_set("s", MIB, Durability.WRITE_BACK)
    writing = WritingPattern.NONE
    reading = ReadingPattern.NONE
    attached: list[ServiceKind] = []
    for attach, kind in ops:
        if attach:
            reg.attach_service(ls.set_id, kind)
            attached.append(kind)
            if kind is ServiceKind.HASH:
                writing = WritingPattern.RANDOM_MUTABLE_WRITE
                reading = ReadingPattern.RANDOM_READ
            else:
                side, val = _EXPECT_PATTERNS[kind]
                if side == "writing":
                    writing = val
                else:
                    reading = val
        else:
            reg.detach_service(ls.set_id, kind)
            if kind in attached:
                attached.remove(kind)
        has_w = any(k in (ServiceKind.SEQ_WRITE, ServiceKind.SHUFFLE,
                          ServiceKind.HASH) for k in attached)
        has_r = any(k in (ServiceKind.SEQ_READ, ServiceKind.HASH)
                    for k in attached)
        expect_op = (CurrentOperation.READ_AND_WRITE if has_w and has_r
                     else CurrentOperation.WRITE if has_w
                     else CurrentOperation.READ if has_r
                     else CurrentOperation.NONE)
        assert ls.attributes.writing_pattern is writing
        assert ls.attributes.reading_pattern is reading
        assert ls.attributes.current_operation is expect_op
