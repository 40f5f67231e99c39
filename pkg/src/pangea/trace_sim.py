"""Reference trace simulator for the canonical sequential read-after-write
workload: one locality set of P pages, a pool of C page slots, a write phase
creating pages 0..P-1 in order, then N full sequential scan passes.

This is the independent oracle the paging tests compare engine counters
against. It deliberately shares no code with the engine or the paging module:
policies are re-derived here from their definitions over a flat page table.

Modeled policy semantics (matching the engine's operational sequence: space
is made *before* the new page is created or loaded, nothing is pinned at
decision time, ticks advance once per page access):

  data-aware  victim order MRU (sequential set); one victim while the set is
              being written, ceil(10% of evictable) while it is read
  mru         ceil(10%) most recently used per eviction
  lru         ceil(10%) least recently used per eviction
  dbmin       one victim per eviction, MRU order (sequential patterns);
              desired sizes: 1 page under writing, min(set, pool) under
              reading; fixed-size variants block when over budget
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class PhaseCounters:
    loads: int = 0
    evictions: int = 0
    write_backs: int = 0

    def as_dict(self) -> dict:
        return {"loads": self.loads, "evictions": self.evictions,
                "write_backs": self.write_backs}


class PolicyBlockedInSim(Exception):
    """DBMIN refused the workload (desired sizes exceed the pool)."""


@dataclass
class _SimPage:
    tick: int
    dirty: bool


class _SeqSim:
    def __init__(self, total_pages: int, pool_pages: int, policy: str,
                 write_through: bool):
        self.P = total_pages
        self.C = pool_pages
        self.policy = policy
        self.write_through = write_through
        self.resident: dict[int, _SimPage] = {}
        self.on_disk: set[int] = set()
        self.tick = 0
        self.phase: PhaseCounters | None = None

    # -- policy mechanics ---------------------------------------------------

    def _quota(self, phase_op: str) -> int:
        n = len(self.resident)
        if self.policy == "data-aware":
            return 1 if phase_op == "write" else max(1, math.ceil(0.10 * n))
        if self.policy in ("lru", "mru"):
            return max(1, math.ceil(0.10 * n))
        return 1  # dbmin variants replace a single page

    def _victims(self, phase_op: str) -> list[int]:
        q = self._quota(phase_op)
        reverse = self.policy != "lru"  # every other policy here is MRU-ordered
        ordered = sorted(self.resident, key=lambda p: self.resident[p].tick,
                         reverse=reverse)
        return ordered[:q]

    def _check_dbmin_budget(self, phase_op: str, set_pages: int) -> None:
        if self.policy == "dbmin-1000":
            desired = 1000
        elif self.policy == "dbmin-1":
            desired = 1
        elif self.policy == "dbmin-adaptive":
            desired = 1 if phase_op == "write" else min(set_pages, self.C)
        else:
            return
        if desired > self.C:
            raise PolicyBlockedInSim(
                f"{self.policy}: desired {desired} pages > pool {self.C}"
            )

    def _evict_batch(self, phase_op: str) -> None:
        for p in self._victims(phase_op):
            page = self.resident.pop(p)
            if page.dirty:
                self.phase.write_backs += 1
                self.on_disk.add(p)
            self.phase.evictions += 1

    def _make_room(self, phase_op: str, set_pages: int) -> None:
        self._check_dbmin_budget(phase_op, set_pages)
        while len(self.resident) >= self.C:
            self._evict_batch(phase_op)

    # -- workload phases ------------------------------------------------------

    def write_phase(self) -> PhaseCounters:
        self.phase = PhaseCounters()
        for p in range(self.P):
            self._make_room("write", p)
            self.tick += 1
            if self.write_through:
                # flushed when its writer moves on; counts as one write
                self.phase.write_backs += 1
                self.on_disk.add(p)
                self.resident[p] = _SimPage(self.tick, dirty=False)
            else:
                self.resident[p] = _SimPage(self.tick, dirty=True)
        return self.phase

    def scan_phase(self) -> PhaseCounters:
        self.phase = PhaseCounters()
        for p in range(self.P):
            if p in self.resident:
                self.tick += 1
                self.resident[p].tick = self.tick
                continue
            self._make_room("read", self.P)
            assert p in self.on_disk, "scan miss for a page that was never spilled"
            self.tick += 1
            self.resident[p] = _SimPage(self.tick, dirty=False)
            self.phase.loads += 1
        return self.phase


def simulate_seq_workload(total_pages: int, pool_pages: int, scans: int,
                          policy: str, write_through: bool = False
                          ) -> list[PhaseCounters]:
    """Exact per-phase counters (write phase first, then one per scan)."""
    sim = _SeqSim(total_pages, pool_pages, policy, write_through)
    phases = [sim.write_phase()]
    for _ in range(scans):
        phases.append(sim.scan_phase())
    return phases
