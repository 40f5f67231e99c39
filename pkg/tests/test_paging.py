import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pangea.buffer_pool import Page
from pangea.errors import (
    NoEvictablePage,
    NonPositiveInterval,
    PagePinned,
    PolicyBlocked,
)
from pangea.locality import (
    CurrentOperation,
    Durability,
    Lifetime,
    ReadingPattern,
    ServiceKind,
    SetAttributes,
    LocalitySet,
    WritingPattern,
)
from pangea.paging import (
    CostModelParams,
    Strategy,
    WriteCostForm,
    eviction_cost,
    eviction_quota,
    lambda_estimate,
    order_victims,
    p_reuse,
    select_victim_set,
    strategy_for,
)

REL_TOL = 1e-12


def make_set(set_id=0, durability=Durability.WRITE_BACK, v_r=0.1, v_w=0.2,
             reading=ReadingPattern.NONE, writing=WritingPattern.NONE,
             lifetime=Lifetime.ALIVE, penalty=2.0):
    ls = LocalitySet(set_id=set_id, name=f"s{set_id}", page_size=1024,
                     attributes=SetAttributes(durability=durability),
                     random_read_penalty=penalty)
    ls.profiled_v_r = v_r
    ls.profiled_v_w = v_w
    ls.attributes.reading_pattern = reading
    ls.attributes.writing_pattern = writing
    ls.attributes.lifetime = lifetime
    return ls


def make_page(set_id=0, seq=0, tick=0, dirty=False, pinned=0):
    page = Page((set_id, seq), 1024)
    page.resident = True
    page.last_access_tick = tick
    page.dirty = dirty
    page.pin_count = pinned
    return page


# ---------------------------------------------------------------------------
# lambda
# ---------------------------------------------------------------------------

def test_lambda_direct_substitution():
    assert lambda_estimate(100, 96) == pytest.approx(0.25, rel=REL_TOL)
    assert lambda_estimate(7, 6) == pytest.approx(1.0, rel=REL_TOL)


def test_lambda_nonpositive_interval():
    with pytest.raises(NonPositiveInterval):
        lambda_estimate(5, 5)
    with pytest.raises(NonPositiveInterval):
        lambda_estimate(4, 5)


# ---------------------------------------------------------------------------
# p_reuse
# ---------------------------------------------------------------------------

def test_p_reuse_never_referenced_limit():
    assert p_reuse(0.0, 1) == 0.0


def test_p_reuse_closed_form():
    assert p_reuse(1.0, 1) == pytest.approx(0.6321205588285577, rel=REL_TOL)


def test_p_reuse_linear_vs_exact():
    linear = p_reuse(0.1, 1, use_linear_approx=True)
    exact = p_reuse(0.1, 1)
    assert linear == pytest.approx(0.1, rel=REL_TOL)
    assert exact == pytest.approx(0.09516258196404048, rel=REL_TOL)
    assert (linear - exact) / exact < 0.051


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 50.0), st.integers(1, 100))
def test_p_reuse_bounded_and_monotone(lam, t):
    v = p_reuse(lam, t)
    assert 0.0 <= v <= 1.0
    if lam * t <= 30:  # beyond this 1 - e^-x saturates to 1.0 in float64
        assert v < 1.0
    assert p_reuse(lam + 0.25, t) >= v
    assert p_reuse(lam, t + 1) >= v


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-6, 0.5))
def test_linear_gap_bound(x):
    """For lam*t <= 0.5 the Taylor remainder bounds the linear-exact gap."""
    gap = abs(p_reuse(x, 1, use_linear_approx=True) - p_reuse(x, 1))
    assert gap <= x * x / 2.0 + 1e-15


# ---------------------------------------------------------------------------
# eviction_cost
# ---------------------------------------------------------------------------

def test_cost_clean_write_through_long_idle():
    ls = make_set(durability=Durability.WRITE_THROUGH, v_r=0.1,
                  reading=ReadingPattern.SEQUENTIAL_READ)
    page = make_page(tick=0)
    cost = eviction_cost(page, ls, CostModelParams(), now=1000)
    assert cost == pytest.approx((1 - math.exp(-0.001)) * 0.1, rel=REL_TOL)
    assert cost == pytest.approx(9.995001666249781e-05, rel=REL_TOL)


def test_cost_dirty_write_back_lambda_zero_times_form():
    ls = make_set(durability=Durability.WRITE_BACK, v_w=0.2)
    page = make_page(tick=0, dirty=True)
    # enormous idle interval: p_reuse ~ 0, only the write cost remains
    cost = eviction_cost(page, ls, CostModelParams(), now=10 ** 15)
    assert cost == pytest.approx(0.2, rel=1e-6)


def test_cost_divided_form_as_printed():
    ls = make_set(durability=Durability.WRITE_BACK, v_w=0.2)
    page = make_page(tick=0, dirty=True)
    params = CostModelParams(write_cost_form=WriteCostForm.DIVIDED_BY_VW)
    cost = eviction_cost(page, ls, params, now=10 ** 15)
    assert cost == pytest.approx(1 / 0.2, rel=1e-6)


def test_cost_random_read_penalty_doubles_read_term():
    seq = make_set(set_id=0, durability=Durability.WRITE_THROUGH, v_r=0.1,
                   reading=ReadingPattern.SEQUENTIAL_READ)
    rnd = make_set(set_id=1, durability=Durability.WRITE_THROUGH, v_r=0.1,
                   reading=ReadingPattern.RANDOM_READ)
    p1, p2 = make_page(0, tick=50), make_page(1, tick=50)
    params = CostModelParams()
    c_seq = eviction_cost(p1, seq, params, now=100)
    c_rnd = eviction_cost(p2, rnd, params, now=100)
    assert c_rnd == pytest.approx(2.0 * c_seq, rel=REL_TOL)


def test_cost_twenty_randomized_cases_match_closed_form():
    import random
    rng = random.Random(7)
    params_exact = CostModelParams()
    for _ in range(25):
        v_r = rng.uniform(0.01, 1.0)
        v_w = rng.uniform(0.01, 1.0)
        dirty = rng.random() < 0.5
        wb = rng.random() < 0.5
        random_read = rng.random() < 0.5
        tick = rng.randrange(0, 1000)
        now = tick + rng.randrange(1, 10000)
        t_h = rng.randrange(1, 5)
        ls = make_set(
            durability=Durability.WRITE_BACK if wb else Durability.WRITE_THROUGH,
            v_r=v_r, v_w=v_w,
            reading=ReadingPattern.RANDOM_READ if random_read else ReadingPattern.SEQUENTIAL_READ)
        page = make_page(tick=tick, dirty=dirty)
        params = CostModelParams(horizon_t=t_h)
        got = eviction_cost(page, ls, params, now)
        lam = 1.0 / (now - tick)
        c_r = v_r * (2.0 if random_read else 1.0)
        c_w = v_w if (dirty and wb) else 0.0
        want = c_w + (1 - math.exp(-lam * t_h)) * c_r
        assert got == pytest.approx(want, rel=REL_TOL)


def test_cost_rejects_pinned_page():
    ls = make_set()
    page = make_page(tick=0, pinned=1)
    with pytest.raises(PagePinned):
        eviction_cost(page, ls, CostModelParams(), now=10)


def test_cost_invariant_under_tick_shift():
    ls = make_set(durability=Durability.WRITE_BACK, v_r=0.3, v_w=0.1)
    params = CostModelParams()
    a = eviction_cost(make_page(tick=10, dirty=True), ls, params, now=25)
    b = eviction_cost(make_page(tick=1010, dirty=True), ls, params, now=1025)
    assert a == b


# ---------------------------------------------------------------------------
# strategies, quotas, victim selection
# ---------------------------------------------------------------------------

def test_strategy_mapping():
    for writing, reading, expect in [
        (WritingPattern.SEQUENTIAL_WRITE, ReadingPattern.NONE, Strategy.MRU),
        (WritingPattern.CONCURRENT_WRITE, ReadingPattern.NONE, Strategy.MRU),
        (WritingPattern.NONE, ReadingPattern.SEQUENTIAL_READ, Strategy.MRU),
        (WritingPattern.RANDOM_MUTABLE_WRITE, ReadingPattern.RANDOM_READ, Strategy.LRU),
        (WritingPattern.NONE, ReadingPattern.RANDOM_READ, Strategy.LRU),
    ]:
        attrs = SetAttributes(durability=Durability.WRITE_BACK,
                              writing_pattern=writing, reading_pattern=reading)
        assert strategy_for(attrs) is expect


def test_order_victims_mru_lru():
    pages = [make_page(seq=i, tick=t) for i, t in enumerate([3, 9, 5])]
    mru = order_victims(pages, Strategy.MRU, quota=1)
    assert mru[0].last_access_tick == 9
    lru = order_victims(pages, Strategy.LRU, quota=2)
    assert [p.last_access_tick for p in lru] == [3, 5]


def test_quota_rule():
    assert eviction_quota(CurrentOperation.WRITE, 500) == 1
    assert eviction_quota(CurrentOperation.READ_AND_WRITE, 500) == 1
    assert eviction_quota(CurrentOperation.READ, 37) == 4
    assert eviction_quota(CurrentOperation.READ, 3) == 1
    assert eviction_quota(CurrentOperation.NONE, 37) == 4


def test_select_victim_set_prefers_lifetime_ended():
    alive = make_set(set_id=0)
    ended = make_set(set_id=1, lifetime=Lifetime.LIFETIME_ENDED)
    candidates = [(alive, make_page(0, tick=1)), (ended, make_page(1, tick=999))]
    set_id, _ = select_victim_set(candidates, now=1000, params=CostModelParams())
    assert set_id == 1


def test_select_victim_set_cost_dominance():
    # A: clean, referenced long ago; B: dirty write-back, just written
    a = make_set(set_id=0, durability=Durability.WRITE_THROUGH)
    b = make_set(set_id=1, durability=Durability.WRITE_BACK)
    candidates = [
        (a, make_page(0, tick=1)),
        (b, make_page(1, tick=999, dirty=True)),
    ]
    set_id, cost = select_victim_set(candidates, now=1000, params=CostModelParams())
    assert set_id == 0
    assert cost < 0.01


def test_select_victim_set_empty_raises():
    with pytest.raises(NoEvictablePage):
        select_victim_set([], now=10, params=CostModelParams())


def test_never_evicts_dirty_when_equal_clean_exists_times_form():
    """With the dimensionally consistent write cost, a dirty write-back page
    always prices above a clean page of equal lambda and read cost."""
    clean = make_set(set_id=0, durability=Durability.WRITE_BACK, v_r=0.1, v_w=0.2)
    dirty = make_set(set_id=1, durability=Durability.WRITE_BACK, v_r=0.1, v_w=0.2)
    candidates = [
        (clean, make_page(0, tick=500)),
        (dirty, make_page(1, seq=1, tick=500, dirty=True)),
    ]
    set_id, _ = select_victim_set(candidates, now=600, params=CostModelParams())
    assert set_id == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10.0))
def test_argmin_invariant_under_uniform_profile_scaling(scale):
    """Scaling all profiled times by one positive constant leaves the victim
    choice unchanged (costs are homogeneous of degree 1 in TimesVw form)."""
    import random
    rng = random.Random(int(scale * 1000) % 97)
    base = []
    for sid in range(4):
        ls = make_set(set_id=sid,
                      durability=rng.choice([Durability.WRITE_BACK,
                                             Durability.WRITE_THROUGH]),
                      v_r=rng.uniform(0.01, 1), v_w=rng.uniform(0.01, 1))
        page = make_page(sid, tick=rng.randrange(0, 900),
                         dirty=rng.random() < 0.5)
        base.append((ls, page))
    params = CostModelParams()
    before, _ = select_victim_set(base, now=1000, params=params)
    for ls, _ in base:
        ls.profiled_v_r *= scale
        ls.profiled_v_w *= scale
    after, _ = select_victim_set(base, now=1000, params=params)
    assert before == after
