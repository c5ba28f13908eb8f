"""Fast built-in property checks behind ``sstdma check``.

Each check returns ``None`` on success or a short failure message. They use
small instances so the whole suite finishes in a few seconds.
"""

from __future__ import annotations

import random
import warnings
from typing import Callable, Optional

from . import analysis
from .clock import SlotParams, signed_offset, slot_of, strictly_newer
from .engine import FaultSpec, SimConfig, run
from .frame_info import FrameInfoEntry, FrameInfoSet, Kind, Occurrence, used_slots
from .topology import grid, star


def check_clock_algebra() -> Optional[str]:
    rng = random.Random("check:clock")
    c = 20 * 16 * 64
    for _ in range(2000):
        a = rng.randrange(10**9)
        d = rng.randrange(-c // 2 + 1, c // 2)
        # unbounded counters a and a+d, observed modulo c
        ta, tb = a % c, (a + d) % c
        if strictly_newer(ta, tb, c) != (d > 0):
            return f"windowed order wrong for a={a}, d={d}"
        if signed_offset(tb, ta, c) != d:
            return f"signed offset wrong for a={a}, d={d}"
    return None


def check_slot_coverage() -> Optional[str]:
    """Used slots agree with a tick-by-tick coverage oracle."""
    rng = random.Random("check:coverage")
    for xi, tau in ((1, 4), (5, 4), (20, 16), (7, 3)):
        p = SlotParams(xi, tau)
        c = xi * tau * 8
        for _ in range(200):
            times = [rng.randrange(c) for _ in range(rng.randint(0, 5))]
            fi = FrameInfoSet(tuple(FrameInfoEntry(k, Kind.MSG, Occurrence.LOCAL, t) for k, t in enumerate(times)))
            want = {((t + d) % c // xi) % tau for t in times for d in range(xi)}
            if set(used_slots(fi, p)) != want:
                return f"used slots of {times} (xi={xi}, tau={tau}) differ from tick coverage"
            for t in times:
                if slot_of(t, p) != (t % c) // xi % tau:
                    return f"slot_of({t}) wrong"
    return None


def check_coverage_bound() -> Optional[str]:
    rng = random.Random("check:bound")
    for _ in range(1000):
        xi = rng.choice((1, 5, 20))
        tau = rng.choice((4, 16))
        k = rng.randint(1, 10)
        starts = [rng.uniform(0, xi * (tau - 1)) for _ in range(k)]
        met, bound = analysis.interval_coverage_bound(starts, xi, tau)
        if met > bound:
            return f"{k} intervals met {met} > {bound} cells"
    if analysis.search_tightness_witness(20, 16, rng) is None:
        return "no tightness witness found"
    return None


def _quiet_run(cfg: SimConfig):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run(cfg)


def check_closure() -> Optional[str]:
    g = grid(3, 3)
    tr = _quiet_run(SimConfig(g, initial_condition="safe", max_frames=48, seed=1))
    if not all(analysis.is_legal(s, g) for s in tr.snapshots):
        return "safe start left the legal set"
    n = analysis.collision_count(tr)
    if n:
        return f"{n} collisions after a safe start"
    return None


def check_blocker() -> Optional[str]:
    g = star(5)
    tr = _quiet_run(SimConfig(g, tau=9, initial_condition="star_blocker", max_frames=50))
    centre = [t for t in tr.transmissions if t.sender == 5]
    if not centre:
        return "centre never attempted to transmit"
    if any(cause == "ok" for t in centre for _, cause in t.outcomes):
        return "a centre transmission reached a leaf"
    if analysis.convergence_frame(tr, g) is not None:
        return "blocked star converged"
    return None


def check_fault_recovery() -> Optional[str]:
    g = grid(3, 3)
    cfg = SimConfig(g, seed=3, max_frames=450, stop_after_safe=16, faults=(FaultSpec(50, "all"),))
    conv = analysis.convergence_frame(_quiet_run(cfg), g)
    if conv is None or conv < 50:
        return f"no re-convergence after a full corruption (convergence frame {conv})"
    return None


CHECKS: dict[str, Callable[[], Optional[str]]] = {
    "clock_algebra": check_clock_algebra,
    "slot_coverage": check_slot_coverage,
    "coverage_bound": check_coverage_bound,
    "closure": check_closure,
    "blocker": check_blocker,
    "fault_recovery": check_fault_recovery,
}


def run_checks(verbose: bool = True) -> list[str]:
    failed = []
    for name, fn in CHECKS.items():
        msg = fn()
        if verbose:
            print(f"{'ok  ' if msg is None else 'FAIL'} {name}" + ("" if msg is None else f": {msg}"))
        if msg is not None:
            failed.append(name)
    return failed
