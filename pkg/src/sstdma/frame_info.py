"""Frame information: what a node has recently heard, and the slot predicates over it.

An entry with reception time ``t`` stands for a transmission occupying
``[t, t + xi)`` on the owner's clock (``xi`` being the packet airtime), which
touches the slots ``slot_of(t)`` through ``slot_of(t + xi - 1)``: one slot when
aligned, two otherwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

from .clock import SlotParams, age, age_within, slot_of


class Kind(str, Enum):
    MSG = "msg"
    WELCOME = "welcome"


class Occurrence(str, Enum):
    LOCAL = "local"
    REMOTE = "remote"


class FrameInfoEntry(NamedTuple):
    id: int
    kind: Kind
    occurrence: Occurrence
    rx_time: int


@dataclass(frozen=True)
class FrameInfoSet:
    entries: tuple[FrameInfoEntry, ...] = ()
    time_out: int = 0
    _masks: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def with_entries(self, entries: Iterable[FrameInfoEntry]) -> FrameInfoSet:
        return FrameInfoSet(tuple(entries), self.time_out)

    def ids(self, kind: Kind | None = None) -> list[int]:
        return [e.id for e in self.entries if kind is None or e.kind is kind]


def default_time_out(p: SlotParams) -> int:
    """Three frames: tolerates one missed refresh plus misalignment."""
    return 3 * p.frame_ticks


def slot_span_mask(t: int, p: SlotParams) -> int:
    """Bitmask of the slots touched by a transmission starting at ``t``."""
    first = slot_of(t, p)
    last = slot_of(t + p.span - 1, p)
    mask = 1 << first
    while first != last:
        first = (first + 1) % p.tau
        mask |= 1 << first
    return mask


def _mask_to_set(mask: int) -> frozenset[int]:
    out = []
    s = 0
    while mask:
        if mask & 1:
            out.append(s)
        mask >>= 1
        s += 1
    return frozenset(out)


def used_mask(fi: FrameInfoSet, p: SlotParams, local_only: bool = False) -> int:
    key = (p.xi, p.tau, p.span, local_only)
    mask = fi._masks.get(key)
    if mask is None:
        mask = 0
        for e in fi.entries:
            if local_only and e.occurrence is not Occurrence.LOCAL:
                continue
            mask |= slot_span_mask(e.rx_time, p)
        fi._masks[key] = mask
    return mask


def local_entries(fi: FrameInfoSet) -> FrameInfoSet:
    return fi.with_entries(e for e in fi.entries if e.occurrence is Occurrence.LOCAL)


def used_slots(fi: FrameInfoSet, p: SlotParams) -> frozenset[int]:
    return _mask_to_set(used_mask(fi, p))


def unused_slots(fi: FrameInfoSet, p: SlotParams) -> frozenset[int]:
    return _mask_to_set(~used_mask(fi, p) & ((1 << p.tau) - 1))


def is_unused(s: int, fi: FrameInfoSet, p: SlotParams) -> bool:
    """Slot ``s`` is free in the 2-hop view, or the 2-hop view is exhausted and
    ``s`` is free among directly heard neighbours."""
    full = (1 << p.tau) - 1
    used = used_mask(fi, p)
    if not used >> s & 1:
        return True
    if used & full == full:
        return not used_mask(fi, p, local_only=True) >> s & 1
    return False


def conflict_with_neighbors(
    received: Iterable[FrameInfoEntry],
    own_id: int,
    own_slot: int,
    t_send: int,
    t_recv_local: int,
    p: SlotParams,
    c: int,
) -> bool:
    """Whether a neighbour's frame information contradicts our slot.

    Remote reception times are mapped into the receiver's clock by the offset
    ``t_recv_local - t_send``. A conflict is reported when the neighbour has no
    record of us, when its own transmission overlaps our slot, or when it heard
    somebody else inside our slot.
    """
    bit = 1 << own_slot
    if slot_span_mask(t_recv_local, p) & bit:
        return True
    shift = t_recv_local - t_send
    heard_us = False
    for e in received:
        if e.id == own_id:
            heard_us = True
        elif slot_span_mask((e.rx_time + shift) % c, p) & bit:
            return True
    return not heard_us


def record_local(fi: FrameInfoSet, sender: int, kind: Kind, rx_time: int) -> FrameInfoSet:
    kept = [e for e in fi.entries if e.id != sender]
    kept.append(FrameInfoEntry(sender, Kind(kind), Occurrence.LOCAL, rx_time))
    return fi.with_entries(kept)


def cleanup(fi: FrameInfoSet, now: int, c: int) -> FrameInfoSet:
    kept = [e for e in fi.entries if age_within(e.rx_time, now, fi.time_out, c)]
    if len(kept) == len(fi.entries):
        return fi
    return fi.with_entries(kept)


def shift_timestamps(fi: FrameInfoSet, delta: int, c: int) -> FrameInfoSet:
    if delta % c == 0:
        return fi
    return fi.with_entries(e._replace(rx_time=(e.rx_time + delta) % c) for e in fi.entries)


def merge_remote(
    fi: FrameInfoSet,
    received: Iterable[FrameInfoEntry],
    offset: int,
    now: int,
    c: int,
) -> FrameInfoSet:
    """Fold a neighbour's frame information into ``fi`` as remote entries.

    Timestamps are re-stamped by ``max(0, offset)`` and kept only while younger
    than the time-out. One entry is kept per id: a local entry is never
    displaced by hearsay, and among remote entries the youngest wins.
    """
    shift = max(0, offset)
    by_id: dict[int, FrameInfoEntry] = {}
    order: list[int] = []
    for e in fi.entries:
        if e.id not in by_id:
            order.append(e.id)
            by_id[e.id] = e
        elif _prefer(e, by_id[e.id], now, c):
            by_id[e.id] = e
    changed = False
    for e in received:
        z = (e.rx_time + shift) % c
        if not age_within(z, now, fi.time_out, c):
            continue
        new = FrameInfoEntry(e.id, Kind(e.kind), Occurrence.REMOTE, z)
        cur = by_id.get(e.id)
        if cur is None:
            order.append(e.id)
            by_id[e.id] = new
            changed = True
        elif _prefer(new, cur, now, c):
            by_id[e.id] = new
            changed = True
    if not changed and len(by_id) == len(fi.entries):
        return fi
    return fi.with_entries(by_id[i] for i in order)


def _prefer(new: FrameInfoEntry, cur: FrameInfoEntry, now: int, c: int) -> bool:
    if cur.occurrence is Occurrence.LOCAL:
        return new.occurrence is Occurrence.LOCAL and age(new.rx_time, now, c) < age(cur.rx_time, now, c)
    if new.occurrence is Occurrence.LOCAL:
        return True
    return age(new.rx_time, now, c) < age(cur.rx_time, now, c)


# wire layout of one entry: id u32, kind u8, rx_time u64 (big-endian)
_ENTRY = struct.Struct(">IBQ")
_KIND_CODES = {Kind.MSG: 0, Kind.WELCOME: 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def encode_entries(entries: Iterable[FrameInfoEntry]) -> bytes:
    return b"".join(_ENTRY.pack(e.id, _KIND_CODES[e.kind], e.rx_time) for e in entries)


def decode_entries(buf: bytes, count: int, offset: int = 0) -> tuple[tuple[FrameInfoEntry, ...], int]:
    """Decode ``count`` entries starting at ``offset``; returns ``(entries, next_offset)``.

    Decoded entries are marked local: they are the sender's own direct observations.
    """
    end = offset + count * _ENTRY.size
    if end > len(buf):
        raise ValueError("truncated frame information")
    out = []
    for i in range(count):
        ident, code, rx = _ENTRY.unpack_from(buf, offset + i * _ENTRY.size)
        try:
            kind = _CODE_KINDS[code]
        except KeyError:
            raise ValueError(f"unknown entry kind code {code}") from None
        out.append(FrameInfoEntry(ident, kind, Occurrence.LOCAL, rx))
    return tuple(out), end
