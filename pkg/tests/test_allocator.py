import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pangea.allocator import (
    AllocatorKind,
    ArenaFull,
    SegregatedFitAllocator,
    SlabAllocator,
    make_allocator,
)
from pangea.errors import InvalidArgs, ZeroCapacity


def test_segregated_exact_accounting():
    a = SegregatedFitAllocator(1024)
    o1 = a.allocate(100)
    o2 = a.allocate(300)
    assert a.used == 400
    a.free(o1, 100)
    assert a.used == 300
    a.free(o2, 300)
    assert a.used == 0
    assert a.free_bytes == 1024


def test_segregated_full_then_coalesce():
    a = SegregatedFitAllocator(256)
    offs = [a.allocate(64) for _ in range(4)]
    with pytest.raises(ArenaFull):
        a.allocate(1)
    # free two non-adjacent, then the middle: coalescing must rebuild 192
    a.free(offs[0], 64)
    a.free(offs[2], 64)
    assert not a.can_fit(128)
    a.free(offs[1], 64)
    assert a.can_fit(192)
    assert a.allocate(192) == 0


def test_zero_capacity_rejected():
    with pytest.raises(ZeroCapacity):
        SegregatedFitAllocator(0)
    with pytest.raises(ZeroCapacity):
        SlabAllocator(0)


def test_slab_uniform_class_only():
    s = SlabAllocator(256)
    s.allocate(64)
    with pytest.raises(InvalidArgs):
        s.allocate(32)


def test_slab_reuse_slots():
    s = SlabAllocator(128)
    a = s.allocate(64)
    b = s.allocate(64)
    with pytest.raises(ArenaFull):
        s.allocate(64)
    s.free(a, 64)
    assert s.allocate(64) == a
    assert s.used == 128
    assert b == 64


def test_make_allocator_kinds():
    assert isinstance(make_allocator(AllocatorKind.SLAB, 64), SlabAllocator)
    assert isinstance(make_allocator(AllocatorKind.SEGREGATED_FIT, 64),
                      SegregatedFitAllocator)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(1, 96)), min_size=1, max_size=60))
def test_segregated_random_ops_never_overlap(ops):
    """Random allocate/free interleavings: live blocks never overlap and
    accounting stays exact."""
    a = SegregatedFitAllocator(1 << 10)
    live: list[tuple[int, int]] = []
    for is_alloc, size in ops:
        if is_alloc or not live:
            try:
                off = a.allocate(size)
            except ArenaFull:
                continue
            live.append((off, size))
        else:
            off, size = live.pop(size % len(live))
            a.free(off, size)
        assert a.used == sum(s for _, s in live)
        spans = sorted(live)
        for (o1, s1), (o2, _) in zip(spans, spans[1:]):
            assert o1 + s1 <= o2, "allocations overlap"
