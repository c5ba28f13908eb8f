"""Shared radio medium: airtime collisions, the omission adversary and the packet wire format.

A copy of a packet sent by ``i`` is lost at neighbour ``j`` when any other node
in ``N(i) | N(j)`` transmits during an overlapping interval, or when ``j`` is
itself transmitting (half duplex). There is no capture effect and no carrier
sensing.
"""

from __future__ import annotations

import random
import re
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .frame_info import decode_entries, encode_entries
from .protocol import Packet, Status
from .topology import Topology


class Cause(str, Enum):
    OK = "ok"
    COLLISION = "collision"
    OMISSION = "adversarial_omission"


@dataclass(frozen=True)
class Transmission:
    sender: int
    start: int
    duration: int
    packet: Optional[Packet] = None

    @property
    def end(self) -> int:
        return self.start + self.duration

    def overlaps(self, other: Transmission) -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class DeliveryOutcome:
    sender: int
    receiver: int
    start: int
    delivered: bool
    cause: Cause

    def __post_init__(self):
        if self.delivered != (self.cause is Cause.OK):
            raise ValueError("delivered outcomes must have cause ok, lost ones must not")


def interferers(tx: Transmission, receiver: int, others: Iterable[Transmission], graph: Topology) -> list[int]:
    """Senders whose airtime kills ``tx`` at ``receiver``."""
    zone = graph.adj[tx.sender] | graph.adj[receiver] | {receiver}
    return [o.sender for o in others if o.sender != tx.sender and o.sender in zone and o.overlaps(tx)]


def resolve(transmissions: Sequence[Transmission], graph: Topology) -> list[DeliveryOutcome]:
    """Collision outcome of every (transmission, neighbour) pair."""
    out = []
    for tx in transmissions:
        for j in sorted(graph.adj[tx.sender]):
            lost = bool(interferers(tx, j, transmissions, graph))
            out.append(DeliveryOutcome(tx.sender, j, tx.start, not lost, Cause.COLLISION if lost else Cause.OK))
    return out


def channel_write(q: Optional[bytes], m: bytes) -> bytes:
    """A channel holds only the most recent message."""
    return m


@dataclass(frozen=True)
class OmissionPolicy:
    kind: str = "none"
    p: float = 0.0
    targets: frozenset[int] = frozenset()

    KINDS = ("none", "random", "targeted", "always_when_concurrent")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown omission policy {self.kind!r}; expected one of {self.KINDS}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"omission probability {self.p} outside [0, 1]")

    @classmethod
    def parse(cls, text: str) -> OmissionPolicy:
        """Parse ``none``, ``random(0.2)``, ``targeted(1,4)`` or ``always_when_concurrent``."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", text or "none")
        if not m:
            raise ValueError(f"cannot parse omission policy {text!r}")
        kind, arg = m.group(1), (m.group(2) or "").strip()
        if kind == "random":
            return cls("random", p=float(arg))
        if kind == "targeted":
            return cls("targeted", targets=frozenset(int(x) for x in arg.split(",") if x.strip()))
        if arg:
            raise ValueError(f"policy {kind!r} takes no argument")
        return cls(kind)

    def __str__(self):
        if self.kind == "random":
            return f"random({self.p})"
        if self.kind == "targeted":
            return "targeted(" + ",".join(str(t) for t in sorted(self.targets)) + ")"
        return self.kind


def adversarial_omit(
    policy: OmissionPolicy,
    tx: Transmission,
    eligible: Iterable[int],
    rng: random.Random,
    concurrent: bool = False,
) -> frozenset[int]:
    """Receivers whose copy the environment removes on top of collisions.

    ``concurrent`` tells whether ``tx`` overlaps a transmission in the sender's
    2-hop neighbourhood.
    """
    eligible = sorted(eligible)
    if policy.kind == "none":
        return frozenset()
    if policy.kind == "random":
        return frozenset(j for j in eligible if rng.random() < policy.p)
    if policy.kind == "targeted":
        return frozenset(j for j in eligible if j in policy.targets)
    return frozenset(eligible) if concurrent else frozenset()


_HEAD = struct.Struct(">BH")
_LEN = struct.Struct(">H")
_STATUS_CODES = {Status.ACT: 0, Status.PSV: 1}
_CODE_STATUS = {v: k for k, v in _STATUS_CODES.items()}


def encode_packet(pkt: Packet) -> bytes:
    """``status u8 | count u16 | entries | payload_len u16 | payload``; length 0 encodes no data."""
    payload = b"" if pkt.data is None else pkt.data.to_bytes(8, "big")
    return b"".join(
        (
            _HEAD.pack(_STATUS_CODES[pkt.sender_status], len(pkt.fi_payload)),
            encode_entries(pkt.fi_payload),
            _LEN.pack(len(payload)),
            payload,
        )
    )


def decode_packet(buf: bytes) -> Packet:
    if len(buf) < _HEAD.size:
        raise ValueError("truncated packet header")
    code, count = _HEAD.unpack_from(buf, 0)
    if code not in _CODE_STATUS:
        raise ValueError(f"unknown status code {code}")
    entries, off = decode_entries(buf, count, _HEAD.size)
    if off + _LEN.size > len(buf):
        raise ValueError("truncated payload length")
    (plen,) = _LEN.unpack_from(buf, off)
    off += _LEN.size
    if plen not in (0, 8):
        raise ValueError(f"payload must be empty or an 8-byte sequence number, got {plen} bytes")
    if off + plen != len(buf):
        raise ValueError("payload length does not match packet size")
    data = int.from_bytes(buf[off:], "big") if plen else None
    return Packet(_CODE_STATUS[code], entries, data)
