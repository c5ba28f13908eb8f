"""Per-node TDMA allocation and alignment state machine.

Two handlers drive a node: :func:`on_timeslot` runs at every slot boundary of
the node's own clock and :func:`on_receive` runs for every packet that survives
the radio medium. Both are pure: they take a :class:`NodeState` and return a new
one, drawing randomness only from the ``rng`` they are handed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

from .clock import ModularClock, SlotParams, advance, frame_of, signed_offset, slot_of, strictly_newer
from .frame_info import (
    FrameInfoEntry,
    FrameInfoSet,
    Kind,
    Occurrence,
    cleanup,
    conflict_with_neighbors,
    default_time_out,
    is_unused,
    local_entries,
    merge_remote,
    record_local,
    shift_timestamps,
    used_mask,
)


class Status(str, Enum):
    ACT = "act"
    PSV = "psv"


class ProtocolFault(RuntimeError):
    """A handler was invoked outside its precondition (a caller bug)."""


@dataclass(frozen=True)
class ProtocolParams:
    """Constants shared by every node of one network.

    ``delta2`` is the known bound on the 2-hop neighbourhood size and sets the
    backoff range ``[1, 3*delta2]``.
    """

    slots: SlotParams
    c: int
    delta2: int
    time_out: int = 0

    def __post_init__(self):
        if self.delta2 < 1:
            raise ValueError("delta2 must be >= 1")
        if self.time_out == 0:
            object.__setattr__(self, "time_out", default_time_out(self.slots))
        if not 0 < self.time_out < self.c / 2:
            raise ValueError(f"time_out {self.time_out} must lie in (0, c/2)")

    @property
    def max_wait(self) -> int:
        return 6 * self.delta2


@dataclass(frozen=True)
class NodeState:
    id: int
    status: Status
    slot: Optional[int]
    wait: int
    wait_add: int
    clock: ModularClock
    fi: FrameInfoSet

    @property
    def active(self) -> bool:
        return self.status is Status.ACT


@dataclass(frozen=True)
class Packet:
    """``data is None`` marks a control packet."""

    sender_status: Status
    fi_payload: tuple[FrameInfoEntry, ...]
    data: Optional[int] = None

    @property
    def is_control(self) -> bool:
        return self.data is None


@dataclass(frozen=True)
class ReceiveMeta:
    sender: int
    t_sender: int
    t_receiver: int


@dataclass(frozen=True)
class ReceiveEffects:
    clock_adjusted: bool = False
    went_passive: bool = False
    delivered: Optional[int] = None


def backoff(wait_add: int, delta2: int, rng: random.Random, max_wait: int | None = None) -> tuple[int, int]:
    """Draw ``r`` in ``[1, 3*delta2]``; return ``(r + wait_add, 3*delta2 - r)``.

    ``max_wait`` caps the first component so corrupted carries stay in range.
    """
    r = rng.randint(1, 3 * delta2)
    wait = r + wait_add
    if max_wait is not None:
        wait = min(wait, max_wait)
    return wait, 3 * delta2 - r


def initial_state(node_id: int, params: ProtocolParams, clock_value: int, rng: random.Random) -> NodeState:
    """Freshly booted node: passive, empty frame information, one backoff drawn."""
    wait, wait_add = backoff(0, params.delta2, rng, params.max_wait)
    return NodeState(
        id=node_id,
        status=Status.PSV,
        slot=None,
        wait=wait,
        wait_add=wait_add,
        clock=ModularClock(clock_value % params.c, params.c),
        fi=FrameInfoSet((), params.time_out),
    )


def _go_passive(state: NodeState, params: ProtocolParams, rng: random.Random, **changes) -> NodeState:
    wait, wait_add = backoff(state.wait_add, params.delta2, rng, params.max_wait)
    return replace(state, status=Status.PSV, wait=wait, wait_add=wait_add, **changes)


def on_timeslot(
    state: NodeState,
    params: ProtocolParams,
    fetch: Callable[[], int],
    rng: random.Random,
) -> tuple[NodeState, Optional[Packet]]:
    p = params.slots
    now = state.clock.value
    if now % p.xi:
        raise ProtocolFault(f"node {state.id}: timeslot handler at clock {now}, not a slot boundary")
    s_now = slot_of(now, p)
    pkt = None
    if state.active and state.slot == s_now:
        pkt = Packet(Status.ACT, local_entries(state.fi).entries, fetch())
    elif not (state.active and frame_of(now, p) != state.slot):
        if state.wait <= 0 and is_unused(s_now, state.fi, p):
            pkt = Packet(state.status, local_entries(state.fi).entries, None)
            wait, wait_add = backoff(state.wait_add, params.delta2, rng, params.max_wait)
            state = replace(state, wait=wait, wait_add=wait_add)
            if not state.active:
                state = replace(state, slot=s_now, status=Status.ACT)
        elif state.wait > 0 and is_unused((s_now - 1) % p.tau, state.fi, p):
            state = replace(state, wait=state.wait - 1)
    fi = cleanup(state.fi, now, params.c)
    if fi is not state.fi:
        state = replace(state, fi=fi)
    return state, pkt


def on_receive(
    state: NodeState,
    meta: ReceiveMeta,
    pkt: Packet,
    params: ProtocolParams,
    rng: random.Random,
) -> tuple[NodeState, ReceiveEffects]:
    """Handle one delivered packet.

    ``state.clock`` must read the receiver's clock at delivery time;
    ``meta.t_receiver`` is the receiver's clock at the instant the sender
    started transmitting.
    """
    p, c = params.slots, params.c
    t_j, t_i = meta.t_sender, meta.t_receiver
    went_passive = False

    if state.active and conflict_with_neighbors(pkt.fi_payload, state.id, state.slot, t_j, t_i, p, c):
        state = _go_passive(state, params, rng)
        went_passive = True

    if pkt.sender_status is Status.ACT:
        if pkt.data is not None:
            state = replace(state, fi=record_local(state.fi, meta.sender, Kind.MSG, t_i))
    elif t_j == t_i and not used_mask(state.fi, p) >> slot_of(t_j, p) & 1:
        state = replace(state, fi=record_local(state.fi, meta.sender, Kind.WELCOME, t_i))

    adjusted = strictly_newer(t_i, t_j, c)
    if adjusted:
        delta = (t_j - t_i) % c
        state = _go_passive(
            state,
            params,
            rng,
            clock=advance(state.clock, delta),
            fi=shift_timestamps(state.fi, delta, c),
        )
        went_passive = True

    offset = signed_offset(t_i, t_j, c)
    fi = merge_remote(state.fi, pkt.fi_payload, offset, state.clock.value, c)
    if fi is not state.fi:
        state = replace(state, fi=fi)

    return state, ReceiveEffects(clock_adjusted=adjusted, went_passive=went_passive, delivered=pkt.data)


def arbitrary_state(
    node_id: int,
    params: ProtocolParams,
    rng: random.Random,
    id_space: int | None = None,
) -> NodeState:
    """A uniformly corrupted but well-typed node state.

    Frame information holds up to ``2*delta2`` entries with ids drawn from
    ``range(id_space)``, each no older than the time-out.
    """
    p, c = params.slots, params.c
    id_space = id_space or max(params.delta2 + 1, node_id + 1)
    clock = ModularClock(rng.randrange(c), c)
    entries = []
    count = min(rng.randint(0, 2 * params.delta2), id_space)
    for ident in rng.sample(range(id_space), count):
        rx = (clock.value - rng.randint(0, params.time_out)) % c
        entries.append(
            FrameInfoEntry(
                ident,
                rng.choice((Kind.MSG, Kind.WELCOME)),
                rng.choice((Occurrence.LOCAL, Occurrence.REMOTE)),
                rx,
            )
        )
    return NodeState(
        id=node_id,
        status=rng.choice((Status.ACT, Status.PSV)),
        slot=rng.randrange(p.tau),
        wait=rng.randint(0, params.max_wait),
        wait_add=rng.randint(0, params.max_wait),
        clock=clock,
        fi=FrameInfoSet(tuple(entries), params.time_out),
    )
