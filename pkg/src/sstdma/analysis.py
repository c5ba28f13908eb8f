"""Predicates and oracles over configurations and recorded runs.

Everything here is read-only: it inspects snapshots and transmission records
produced by :mod:`sstdma.engine` and never touches a live simulation.
"""

from __future__ import annotations

import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple, Optional, Sequence

from .frame_info import FrameInfoEntry, Kind
from .protocol import Status
from .topology import Topology

if TYPE_CHECKING:
    from .engine import Trace


class NodeView(NamedTuple):
    clock: int
    status: Status
    slot: Optional[int]
    fi: tuple[FrameInfoEntry, ...]


@dataclass(frozen=True)
class ConfigurationSnapshot:
    """All node states at one global tick, plus the channels holding a message."""

    frame: int
    tick: int
    nodes: tuple[NodeView, ...]
    in_flight: tuple[tuple[int, int], ...] = ()


class PreconditionError(ValueError):
    pass


def clocks_synchronized(snap: ConfigurationSnapshot) -> bool:
    return len({v.clock for v in snap.nodes}) <= 1


def slots_distance2_distinct(snap: ConfigurationSnapshot, g: Topology) -> bool:
    for i, v in enumerate(snap.nodes):
        if v.slot is None:
            continue
        for j in g.two_hop(i):
            if j > i and snap.nodes[j].slot == v.slot:
                return False
    return True


def is_legal(snap: ConfigurationSnapshot, g: Topology) -> bool:
    """Equal clocks, and no two nodes within distance 2 hold the same slot.

    Nodes without a slot (``None``) are unconstrained; a passive node keeps
    the slot it last held and is checked against it.
    """
    return clocks_synchronized(snap) and slots_distance2_distinct(snap, g)


def knows_neighbourhood(snap: ConfigurationSnapshot, g: Topology, i: int) -> bool:
    counts = Counter(e.id for e in snap.nodes[i].fi if e.kind is Kind.MSG)
    return all(counts[j] == 1 for j in g.two_hop(i) | {i})


def is_safe(snap: ConfigurationSnapshot, g: Topology) -> bool:
    """Synchronized, all active, distance-2 distinct slots, and every node holds
    exactly one ``msg`` record for itself and each member of its 2-hop neighbourhood."""
    if not clocks_synchronized(snap):
        return False
    if any(v.status is not Status.ACT for v in snap.nodes):
        return False
    if not slots_distance2_distinct(snap, g):
        return False
    return all(knows_neighbourhood(snap, g, i) for i in range(g.n))


def convergence_frame(trace: Trace, g: Topology) -> Optional[int]:
    """First snapshot frame that is safe and followed only by legal snapshots."""
    snaps = trace.snapshots
    start = len(snaps)
    while start > 0 and is_legal(snaps[start - 1], g):
        start -= 1
    for snap in snaps[start:]:
        if is_safe(snap, g):
            return snap.frame
    return None


def _frame_of_tick(tick: int, frame_ticks: int) -> int:
    return tick // frame_ticks


def collision_count(trace: Trace, window: Optional[tuple[int, Optional[int]]] = None) -> int:
    """Lost copies whose cause is a collision, for transmissions starting in frames ``[lo, hi)``."""
    lo, hi = window if window is not None else (0, None)
    if hi is not None and hi <= lo:
        return 0
    ft = trace.frame_ticks
    total = 0
    for tx in trace.transmissions:
        f = _frame_of_tick(tx.start, ft)
        if f < lo or (hi is not None and f >= hi):
            continue
        total += sum(1 for _, cause in tx.outcomes if cause == "collision")
    return total


@dataclass(frozen=True)
class ControlRate:
    frames: int
    tau: int
    counts: dict[int, int]
    max_per_neighbourhood_frame: int

    def per_tau(self) -> dict[int, float]:
        return {i: c * self.tau / self.frames for i, c in self.counts.items()}


def control_packet_rate(trace: Trace, g: Topology, window: tuple[int, int]) -> ControlRate:
    """Control packets per node inside frames ``[lo, hi)`` of a converged run.

    Also reports the largest number of control packets sent during a single
    frame by nodes of one closed neighbourhood, i.e. by nodes pairwise within
    distance 2.
    """
    lo, hi = window
    conv = convergence_frame(trace, g)
    if conv is None or lo < conv:
        raise PreconditionError(f"window starts at frame {lo}, before convergence ({conv})")
    if hi <= lo:
        raise PreconditionError("empty window")
    ft = trace.frame_ticks
    counts = {i: 0 for i in range(g.n)}
    per_frame: dict[int, list[int]] = defaultdict(list)
    for tx in trace.transmissions:
        f = _frame_of_tick(tx.start, ft)
        if lo <= f < hi and tx.kind == "control":
            counts[tx.sender] += 1
            per_frame[f].append(tx.sender)
    worst = 0
    for senders in per_frame.values():
        for i in range(g.n):
            zone = g.adj[i] | {i}
            worst = max(worst, sum(1 for s in senders if s in zone))
    return ControlRate(hi - lo, trace.tau, counts, worst)


def interval_coverage_bound(starts: Sequence[float], xi: float, tau: int) -> tuple[int, int]:
    """Partition cells ``[a*xi, (a+1)*xi)`` of ``[0, xi*tau)`` met by intervals ``[b, b+xi)``.

    Returns ``(cells_met, 2 * len(starts))``.
    """
    met = set()
    for b in starts:
        for a in range(tau):
            if a * xi < b + xi and b < (a + 1) * xi:
                met.add(a)
    return len(met), 2 * len(starts)


def search_tightness_witness(xi: float, tau: int, rng: random.Random, tries: int = 1000) -> Optional[list[float]]:
    """Look for interval starts meeting exactly ``2*|C|`` cells."""
    for _ in range(tries):
        k = rng.randint(1, max(1, tau // 2))
        starts = [rng.uniform(0, xi * (tau - 1)) for _ in range(k)]
        met, bound = interval_coverage_bound(starts, xi, tau)
        if met == bound:
            return starts
    return None


def empirical_delays(trace: Trace) -> dict[str, float]:
    """Mean frames between successful receptions per ordered neighbour pair."""
    ft = trace.frame_ticks
    last: dict[tuple[int, int], int] = {}
    gaps: list[int] = []
    for tx in trace.transmissions:
        for r, cause in tx.outcomes:
            if cause == "ok":
                key = (tx.sender, r)
                if key in last:
                    gaps.append(tx.start - last[key])
                last[key] = tx.start
    mean = sum(gaps) / len(gaps) / ft if gaps else math.nan
    return {"mean_gap_frames": mean, "samples": float(len(gaps))}


def run_metrics(trace: Trace, g: Topology) -> dict:
    conv = convergence_frame(trace, g)
    return {
        "seed": trace.seed,
        "n": g.n,
        "topology": g.name,
        "tau": trace.tau,
        "xi": trace.xi,
        "convergence_frame": "" if conv is None else conv,
        "collisions_total": collision_count(trace),
        "collisions_post_convergence": "" if conv is None else collision_count(trace, (conv, None)),
    }
