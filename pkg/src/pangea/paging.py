"""Victim selection.

The data-aware policy prices every candidate eviction as

    expected_cost = c_w + p_reuse * c_r

with c_r = profiled_read_time * read_penalty, c_w derived from durability and
dirtiness, and p_reuse a Poisson-model reuse probability computed from the
time since the page's last reference. The set whose strategy-designated next
victim is cheapest loses pages; sets whose lifetime has ended are always
drained first. LRU / MRU / DBMIN baselines live here too so benchmarks can
swap them in behind the same entry point.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field

from .errors import (
    InvalidArgs,
    NoEvictablePage,
    NonPositiveInterval,
    PagePinned,
    PolicyBlocked,
)
from .locality import (
    CurrentOperation,
    Lifetime,
    LocalitySet,
    ReadingPattern,
    SetAttributes,
    WritingPattern,
)


class WriteCostForm(enum.Enum):
    # d / v_w as printed in the source formula; cost falls as disks slow down.
    DIVIDED_BY_VW = "divided"
    # d * v_w, dimensionally consistent with the read side. Default.
    TIMES_VW = "times"


@dataclass
class CostModelParams:
    horizon_t: int = 1
    use_linear_approx: bool = False
    write_cost_form: WriteCostForm = WriteCostForm.TIMES_VW

    def __post_init__(self):
        if self.horizon_t < 1:
            raise ValueError("horizon_t must be >= 1")


@dataclass
class EvictionDecision:
    victim_set: int
    victim_pages: list[tuple[int, int]]
    predicted_cost: float = 0.0


def lambda_estimate(t_now: int, t_ref: int) -> float:
    """Reference rate per tick: inverse of the time since last reference."""
    if t_ref < 0 or t_now <= t_ref:
        raise NonPositiveInterval(f"t_now={t_now}, t_ref={t_ref}")
    return 1.0 / (t_now - t_ref)


def p_reuse(lam: float, t: int, use_linear_approx: bool = False) -> float:
    """Probability the page is referenced within the next t ticks.

    Exact mode is the exponential CDF 1 - e^(-lam*t); linear mode is its
    first-order Taylor approximation lam*t, clamped to 1.
    """
    if use_linear_approx:
        return min(lam * t, 1.0)
    return 1.0 - math.exp(-lam * t)


def eviction_cost(page, owner: LocalitySet, params: CostModelParams, now: int) -> float:
    """Expected cost in seconds of evicting `page` from `owner` right now."""
    if page.pin_count > 0:
        raise PagePinned(page.key)
    interval = now - page.last_access_tick
    if interval <= 0:
        interval = 1  # pages touched at the current tick
    lam = 1.0 / interval
    c_r = owner.profiled_v_r * owner.read_penalty_w_r
    dirty_write_back = (
        page.dirty and owner.attributes.durability.value == "write-back"
    )
    if not dirty_write_back:
        c_w = 0.0
    elif params.write_cost_form is WriteCostForm.TIMES_VW:
        c_w = owner.profiled_v_w
    else:
        c_w = 1.0 / owner.profiled_v_w
    return c_w + p_reuse(lam, params.horizon_t, params.use_linear_approx) * c_r


class Strategy(enum.Enum):
    MRU = "mru"
    LRU = "lru"


def strategy_for(attrs: SetAttributes) -> Strategy:
    """MRU for sequential-write/concurrent-write/sequential-read sets,
    LRU for random-mutable-write/random-read (and for unlabeled sets)."""
    if attrs.writing_pattern is WritingPattern.RANDOM_MUTABLE_WRITE:
        return Strategy.LRU
    if attrs.reading_pattern is ReadingPattern.RANDOM_READ:
        return Strategy.LRU
    if attrs.writing_pattern in (WritingPattern.SEQUENTIAL_WRITE,
                                 WritingPattern.CONCURRENT_WRITE):
        return Strategy.MRU
    if attrs.reading_pattern is ReadingPattern.SEQUENTIAL_READ:
        return Strategy.MRU
    return Strategy.LRU


def order_victims(pages, strategy: Strategy, quota: int | None = None):
    """Pages in eviction order for `strategy`; pinned pages are the caller's
    problem (the engine only passes evictable pages)."""
    if strategy is Strategy.MRU:
        key = lambda p: (-p.last_access_tick, -p.key[1])
    else:
        key = lambda p: (p.last_access_tick, p.key[1])
    if quota is None:
        return sorted(pages, key=key)
    return heapq.nsmallest(quota, pages, key=key)


def eviction_quota(op: CurrentOperation, resident_unpinned: int) -> int:
    """1 page for sets under writing; ceil(10%) of evictable pages otherwise."""
    if op in (CurrentOperation.WRITE, CurrentOperation.READ_AND_WRITE):
        return 1
    return max(1, math.ceil(0.10 * resident_unpinned))


def select_victim_set(candidates, now: int, params: CostModelParams) -> tuple[int, float]:
    """Pick the victim set among (set, designated_next_victim_page) pairs.

    Lifetime-ended sets win outright (cheapest first among them); otherwise
    the set whose designated victim has minimal expected cost. Ties break
    toward the smallest set_id.
    """
    if not candidates:
        raise NoEvictablePage("no set owns an unpinned resident page")
    ended = [(ls, pg) for ls, pg in candidates
             if ls.attributes.lifetime is Lifetime.LIFETIME_ENDED]
    pool = ended if ended else candidates
    best = min(pool, key=lambda c: (eviction_cost(c[1], c[0], params, now), c[0].set_id))
    return best[0].set_id, eviction_cost(best[1], best[0], params, now)


# --------------------------------------------------------------------------
# Policies. A policy turns the engine's current state into one or more
# eviction decisions; the engine applies them inside its eviction region.
# The `view` argument is the engine (duck-typed): it supplies
# evictable_pages(set_id), resident_pages(set_id), registry, tick, and
# pool capacity.
# --------------------------------------------------------------------------

class EvictionPolicy:
    name = "abstract"

    def check_admission(self, view) -> None:
        """Hook run on every page allocation; DBMIN blocks here."""

    def decide(self, view, requesting_set: int | None = None) -> list[EvictionDecision]:
        raise NotImplementedError


class DataAwarePolicy(EvictionPolicy):
    name = "data-aware"

    def __init__(self, params: CostModelParams | None = None):
        self.params = params or CostModelParams()

    def decide(self, view, requesting_set: int | None = None) -> list[EvictionDecision]:
        candidates = []
        for ls in view.registry.all_sets():
            pages = view.evictable_pages(ls.set_id)
            if not pages:
                continue
            strat = strategy_for(ls.attributes)
            designated = order_victims(pages, strat, quota=1)[0]
            candidates.append((ls, designated))
        set_id, cost = select_victim_set(candidates, view.tick, self.params)
        ls = view.registry.get(set_id)
        pages = view.evictable_pages(set_id)
        quota = eviction_quota(ls.attributes.current_operation, len(pages))
        victims = order_victims(pages, strategy_for(ls.attributes), quota=quota)
        return [EvictionDecision(set_id, [p.key for p in victims], cost)]


def _grouped_decisions(ordered_pages) -> list[EvictionDecision]:
    """Group an ordered cross-set victim list into per-set decision runs."""
    decisions: list[EvictionDecision] = []
    for page in ordered_pages:
        if decisions and decisions[-1].victim_set == page.key[0]:
            decisions[-1].victim_pages.append(page.key)
        else:
            decisions.append(EvictionDecision(page.key[0], [page.key]))
    return decisions


class GlobalLruPolicy(EvictionPolicy):
    """Evicts up to 10% of the least recently used unpinned pages pool-wide."""

    name = "lru"

    def decide(self, view, requesting_set: int | None = None) -> list[EvictionDecision]:
        pages = [p for ls in view.registry.all_sets()
                 for p in view.evictable_pages(ls.set_id)]
        if not pages:
            raise NoEvictablePage("pool has no unpinned resident page")
        quota = max(1, math.ceil(0.10 * len(pages)))
        victims = heapq.nsmallest(quota, pages, key=lambda p: (p.last_access_tick, p.key))
        return _grouped_decisions(victims)


class GlobalMruPolicy(EvictionPolicy):
    """Evicts up to 10% of the most recently used unpinned pages pool-wide."""

    name = "mru"

    def decide(self, view, requesting_set: int | None = None) -> list[EvictionDecision]:
        pages = [p for ls in view.registry.all_sets()
                 for p in view.evictable_pages(ls.set_id)]
        if not pages:
            raise NoEvictablePage("pool has no unpinned resident page")
        quota = max(1, math.ceil(0.10 * len(pages)))
        victims = heapq.nlargest(quota, pages, key=lambda p: (p.last_access_tick, p.key))
        return _grouped_decisions(victims)


class DbminMode(enum.Enum):
    ADAPTIVE = "adaptive"
    FIXED_1 = "fixed-1"
    FIXED_1000 = "fixed-1000"


class DbminPolicy(EvictionPolicy):
    """DBMIN-style budgeted replacement.

    Every set gets a desired buffer size; a set at or over budget replaces
    its own pages (per its pattern's local policy), a set under budget takes
    a page from the most over-budget set. The policy refuses service when
    the summed desired sizes exceed the pool.
    """

    def __init__(self, mode: DbminMode, random_fraction: float = 0.05):
        self.mode = mode
        self.random_fraction = random_fraction
        self.name = {
            DbminMode.ADAPTIVE: "dbmin-adaptive",
            DbminMode.FIXED_1: "dbmin-1",
            DbminMode.FIXED_1000: "dbmin-1000",
        }[mode]

    def desired_pages(self, ls: LocalitySet, view) -> int:
        if self.mode is DbminMode.FIXED_1:
            return 1
        if self.mode is DbminMode.FIXED_1000:
            return 1000
        pool_pages = max(1, view.capacity // ls.page_size)
        attrs = ls.attributes
        if attrs.reading_pattern is ReadingPattern.SEQUENTIAL_READ:
            # loop-sequential, upper-bounded at the pool size so repeated
            # scans of an oversized set do not block
            return min(max(1, len(ls.pages)), pool_pages)
        if (attrs.writing_pattern is WritingPattern.RANDOM_MUTABLE_WRITE
                or attrs.reading_pattern is ReadingPattern.RANDOM_READ):
            return max(4, math.ceil(self.random_fraction * pool_pages))
        return 1

    def _check_budget(self, view) -> None:
        total = sum(self.desired_pages(ls, view) * ls.page_size
                    for ls in view.registry.all_sets())
        if total > view.capacity:
            raise PolicyBlocked(
                f"sum of desired sizes ({total} bytes) exceeds pool capacity "
                f"({view.capacity} bytes)"
            )

    def check_admission(self, view) -> None:
        self._check_budget(view)

    def decide(self, view, requesting_set: int | None = None) -> list[EvictionDecision]:
        self._check_budget(view)
        best = None
        best_excess = None
        for ls in view.registry.all_sets():
            pages = view.evictable_pages(ls.set_id)
            if not pages:
                continue
            excess = len(view.resident_pages(ls.set_id)) - self.desired_pages(ls, view)
            # the requester replaces locally once it reaches its budget
            if requesting_set == ls.set_id and excess >= 0:
                excess += 0.5
            if best_excess is None or excess > best_excess or (
                    excess == best_excess and ls.set_id < best.set_id):
                best, best_excess = ls, excess
        if best is None:
            raise NoEvictablePage("pool has no unpinned resident page")
        pages = view.evictable_pages(best.set_id)
        victim = order_victims(pages, strategy_for(best.attributes), quota=1)
        return [EvictionDecision(best.set_id, [victim[0].key])]


POLICY_NAMES = ("data-aware", "lru", "mru", "dbmin-adaptive", "dbmin-1", "dbmin-1000")


def make_policy(name: str, params: CostModelParams | None = None) -> EvictionPolicy:
    if name == "data-aware":
        return DataAwarePolicy(params)
    if name == "lru":
        return GlobalLruPolicy()
    if name == "mru":
        return GlobalMruPolicy()
    if name == "dbmin-adaptive":
        return DbminPolicy(DbminMode.ADAPTIVE)
    if name == "dbmin-1":
        return DbminPolicy(DbminMode.FIXED_1)
    if name == "dbmin-1000":
        return DbminPolicy(DbminMode.FIXED_1000)
    raise InvalidArgs(f"unknown policy {name!r}; choose from {POLICY_NAMES}")
