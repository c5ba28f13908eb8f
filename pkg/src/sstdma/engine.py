"""Deterministic discrete-event execution of the protocol over the radio medium.

Global time is an integer tick counter. Node ``i`` reads its clock as
``(tick + offset[i]) % c``; a clock adjustment only changes ``offset[i]``.
Within one tick events run as: fault injection, snapshot, packet deliveries
(ascending receiver, then sender), timeslot handlers (ascending node id),
delayed emissions.
"""

from __future__ import annotations

import heapq
import json
import logging
import random
import warnings
import zlib
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Optional

from . import analysis
from .analysis import ConfigurationSnapshot, NodeView
from .clock import ModularClock, SlotParams, default_modulus, validate_modulus
from .frame_info import FrameInfoEntry, FrameInfoSet, Kind, Occurrence
from .medium import (
    Cause,
    OmissionPolicy,
    Transmission,
    adversarial_omit,
    channel_write,
    decode_packet,
    encode_packet,
    interferers,
)
from .protocol import (
    NodeState,
    ProtocolParams,
    ReceiveMeta,
    Status,
    arbitrary_state,
    backoff,
    initial_state,
    on_receive,
    on_timeslot,
)
from .topology import Topology, greedy_distance2_coloring, metrics

log = logging.getLogger(__name__)

INITIAL_CONDITIONS = ("random_offsets", "synchronized_clocks", "arbitrary", "star_blocker", "safe")
_DELIVER, _TIMESLOT, _EMIT = 0, 1, 2


class ConfigError(ValueError):
    pass


class TraceOverflow(RuntimeError):
    pass


class RegimeWarning(UserWarning):
    """Frame size outside both convergence regimes (``tau > 2*Delta`` or ``tau > max(4*delta, Delta+1)``)."""


@dataclass(frozen=True)
class FaultSpec:
    """Corrupt node states at the start of ``frame``.

    ``scope`` is ``"one"``, ``"k"`` or ``"all"``; ``channels`` is ``"clear"`` or
    ``"randomize"`` for the channels touching the corrupted nodes.
    """

    frame: int
    scope: str = "all"
    k: int = 1
    channels: str = "clear"

    def __post_init__(self):
        if self.scope not in ("one", "k", "all"):
            raise ConfigError(f"unknown fault scope {self.scope!r}")
        if self.channels not in ("clear", "randomize"):
            raise ConfigError(f"unknown channel fault mode {self.channels!r}")
        if self.frame < 0:
            raise ConfigError("fault frame must be >= 0")


@dataclass(frozen=True)
class SimConfig:
    topology: Topology
    xi: int = 20
    tau: int = 16
    c: Optional[int] = None
    time_out: Optional[int] = None
    omission: OmissionPolicy = OmissionPolicy()
    seed: int = 0
    max_frames: int = 200
    jitter: int = 0
    initial_condition: str = "random_offsets"
    initial_clocks: Optional[tuple[int, ...]] = None
    faults: tuple[FaultSpec, ...] = ()
    stop_after_safe: Optional[int] = None
    record_steps: bool = False
    max_trace_events: int = 2_000_000
    delta2: Optional[int] = None

    @property
    def slots(self) -> SlotParams:
        return SlotParams(self.xi, self.tau, self.airtime if self.jitter else None)

    @property
    def modulus(self) -> int:
        return self.c if self.c is not None else default_modulus(self.slots)

    @property
    def airtime(self) -> int:
        """Packet duration: the whole slot, minus a guard of ``jitter`` ticks when jitter is on."""
        return self.xi - self.jitter

    def protocol_params(self) -> ProtocolParams:
        d2 = self.delta2 if self.delta2 is not None else max(1, metrics(self.topology).delta2)
        return ProtocolParams(self.slots, self.modulus, d2, self.time_out or 0)


def validate(config: SimConfig) -> list[str]:
    """Raise :class:`ConfigError` on invalid configs; return warnings for regime violations."""
    g = config.topology
    if g.n < 1:
        raise ConfigError("topology has no nodes")
    if config.jitter < 0 or (config.jitter and 4 * config.jitter >= config.xi):
        raise ConfigError(f"jitter {config.jitter} must satisfy 0 <= J < xi/4 = {config.xi / 4}")
    try:
        m = metrics(g)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    p = config.slots
    try:
        validate_modulus(config.modulus, p, m.diam)
        config.protocol_params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if config.max_frames < 0:
        raise ConfigError("max_frames must be >= 0")
    if config.initial_condition not in INITIAL_CONDITIONS:
        raise ConfigError(f"unknown initial condition {config.initial_condition!r}; expected one of {INITIAL_CONDITIONS}")
    if config.initial_clocks is not None:
        if len(config.initial_clocks) != g.n:
            raise ConfigError("initial_clocks needs one value per node")
        if config.initial_condition in ("star_blocker", "safe"):
            raise ConfigError(f"initial_clocks cannot be combined with {config.initial_condition}")
    if config.initial_condition == "star_blocker":
        _check_blocker(config)
    if config.initial_condition == "safe":
        colors = greedy_distance2_coloring(g)
        if max(colors) >= config.tau:
            raise ConfigError(f"greedy distance-2 colouring needs {max(colors) + 1} slots > tau={config.tau}")
    out = []
    d2 = config.delta2 if config.delta2 is not None else m.delta2
    if not (config.tau > 2 * d2 or config.tau > max(4 * m.delta, d2 + 1)):
        out.append(
            f"tau={config.tau} is outside both convergence regimes "
            f"(2*Delta={2 * d2}, max(4*delta, Delta+1)={max(4 * m.delta, d2 + 1)})"
        )
    return out


def _check_blocker(config: SimConfig) -> None:
    g = config.topology
    leaves = g.n - 1
    if leaves < 1 or len(g.adj[leaves]) != leaves or any(g.adj[i] != {leaves} for i in range(leaves)):
        raise ConfigError("star_blocker needs a star whose centre has the highest id")
    if config.tau != 2 * leaves - 1:
        raise ConfigError(f"star_blocker needs tau = 2*delta - 1 = {2 * leaves - 1}, got {config.tau}")


@dataclass(frozen=True)
class TxRecord:
    start: int
    duration: int
    sender: int
    kind: str  # "data" | "control"
    outcomes: tuple[tuple[int, str], ...]


@dataclass(frozen=True)
class StepRecord:
    tick: int
    node: int
    kind: str
    digest: int


@dataclass
class Trace:
    seed: int
    xi: int
    tau: int
    c: int
    topology: str
    snapshots: list[ConfigurationSnapshot] = field(default_factory=list)
    transmissions: list[TxRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    faults: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    @property
    def frame_ticks(self) -> int:
        return self.xi * self.tau

    def records(self) -> Iterable[dict]:
        """Chronological JSON-compatible records (snapshots, transmissions, steps)."""
        ft = self.frame_ticks
        keyed = []
        for s in self.snapshots:
            keyed.append(((s.tick, 0), _snapshot_record(s)))
        for tx in self.transmissions:
            keyed.append(
                (
                    (tx.start + tx.duration, 1),
                    {
                        "kind": "tx",
                        "tick": tx.start + tx.duration,
                        "node": tx.sender,
                        "start": tx.start,
                        "frame": tx.start // ft,
                        "packet": tx.kind,
                        "outcomes": {str(r): cause for r, cause in tx.outcomes},
                    },
                )
            )
        for st in self.steps:
            keyed.append(((st.tick, 2), {"kind": "step", "tick": st.tick, "node": st.node, "event": st.kind, "digest": st.digest}))
        keyed.sort(key=lambda kv: kv[0])
        yield {"kind": "header", "seed": self.seed, "xi": self.xi, "tau": self.tau, "c": self.c, "topology": self.topology}
        for _, rec in keyed:
            yield rec
        yield {"kind": "summary", "counters": dict(sorted(self.counters.items())), "faults": [[f, list(ns)] for f, ns in self.faults]}

    def dump(self, fp: IO[str]) -> None:
        for rec in self.records():
            fp.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fp.write("\n")

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records())


def _snapshot_record(s: ConfigurationSnapshot) -> dict:
    return {
        "kind": "snapshot",
        "tick": s.tick,
        "frame": s.frame,
        "nodes": [
            {
                "clock": v.clock,
                "status": v.status.value,
                "slot": v.slot,
                "fi": [[e.id, e.kind.value, e.occurrence.value, e.rx_time] for e in v.fi],
            }
            for v in s.nodes
        ],
        "in_flight": [list(p) for p in s.in_flight],
    }


def _rng(seed: int, stream: str) -> random.Random:
    return random.Random(f"{seed}:{stream}")


def star_blocker(delta: int, xi: int, params: ProtocolParams, rng: random.Random) -> list[NodeState]:
    """Initial states for ``star(delta)`` in which the leaves' airtimes starve the centre.

    Leaf ``i`` is active on slot ``i`` and its next slot boundary is
    ``(2*xi - 1) * i`` ticks away, so consecutive leaf transmissions leave gaps
    of ``xi - 1`` ticks and the wrap gap is ``delta - 1`` ticks.
    """
    p = params.slots
    if p.tau != 2 * delta - 1:
        raise ConfigError(f"blocker needs tau = 2*delta - 1 = {2 * delta - 1}, got {p.tau}")
    states = []
    for i in range(delta):
        clock = (i * xi - (2 * xi - 1) * i) % p.frame_ticks
        wait, wait_add = backoff(0, params.delta2, rng, params.max_wait)
        states.append(
            NodeState(i, Status.ACT, i, wait, wait_add, ModularClock(clock, params.c), FrameInfoSet((), params.time_out))
        )
    states.append(NodeState(delta, Status.PSV, None, 0, 0, ModularClock(0, params.c), FrameInfoSet((), params.time_out)))
    return states


def safe_states(g: Topology, params: ProtocolParams, rng: random.Random, clock: int = 0) -> list[NodeState]:
    """A configuration satisfying the four safety conditions at a frame start.

    Slots come from a greedy distance-2 colouring; every node's frame
    information records its neighbours' latest data packets as local entries
    and its 2-hop neighbours and itself as remote entries.
    """
    p, c = params.slots, params.c
    clock -= clock % p.frame_ticks
    colors = greedy_distance2_coloring(g)
    if max(colors) >= p.tau:
        raise ConfigError(f"distance-2 colouring needs {max(colors) + 1} slots > tau={p.tau}")

    def last_tx(slot: int) -> int:
        return (clock - p.frame_ticks + slot * p.xi) % c

    states = []
    for i in range(g.n):
        entries = []
        for j in sorted(g.two_hop(i) | {i}):
            occ = Occurrence.LOCAL if j in g.adj[i] else Occurrence.REMOTE
            entries.append(FrameInfoEntry(j, Kind.MSG, occ, last_tx(colors[j])))
        wait, wait_add = backoff(0, params.delta2, rng, params.max_wait)
        states.append(
            NodeState(i, Status.ACT, colors[i], wait, wait_add, ModularClock(clock % c, c), FrameInfoSet(tuple(entries), params.time_out))
        )
    return states


def inject_fault(
    states: list[NodeState],
    scope: str,
    params: ProtocolParams,
    rng: random.Random,
    k: int = 1,
) -> dict[int, NodeState]:
    """Replace the states of the nodes in ``scope`` by arbitrary ones; returns the new states by id."""
    n = len(states)
    if scope == "one":
        victims = [rng.randrange(n)]
    elif scope == "k":
        victims = sorted(rng.sample(range(n), min(k, n)))
    elif scope == "all":
        victims = list(range(n))
    else:
        raise ConfigError(f"unknown fault scope {scope!r}")
    return {i: arbitrary_state(i, params, rng, id_space=n) for i in victims}


def apply_jitter(tick: int, jitter: int, rng: random.Random) -> int:
    """Handler emission delayed by a uniform draw in ``[0, jitter]``."""
    if jitter <= 0:
        return tick
    return tick + rng.randint(0, jitter)


def _digest(state: NodeState) -> int:
    return zlib.crc32(repr(state).encode())


class Simulation:
    """One run of :class:`SimConfig`; call :meth:`run` once."""

    def __init__(self, config: SimConfig):
        for msg in validate(config):
            warnings.warn(msg, RegimeWarning, stacklevel=2)
        self.config = config
        self.g = config.topology
        self.params = config.protocol_params()
        self.p = self.params.slots
        self.c = self.params.c
        self.seed = config.seed
        n = self.g.n
        self.node_rng = [_rng(config.seed, f"node{i}") for i in range(n)]
        self.env_rng = _rng(config.seed, "env")
        self.fault_rng = _rng(config.seed, "fault")
        self.fetch_seq = [0] * n
        self.states = self._initial_states()
        self.offsets = [s.clock.value for s in self.states]  # tick 0
        self.version = [0] * n
        self.heap: list = []
        self.seq = 0
        self.tick = 0
        self.active_tx: list[Transmission] = []
        self.tx_stamp: dict[tuple[int, int], int] = {}
        self.channels: dict[tuple[int, int], bytes] = {}
        self.last_delivered: dict[tuple[int, int], int] = {}
        self.trace = Trace(config.seed, config.xi, config.tau, self.c, self.g.name)
        self.trace.counters.update(
            decode_errors=0, clock_adjustments=0, conflicts=0, deliveries=0, out_of_order=0, transmissions=0
        )
        self._events = 0
        for i in range(n):
            self._schedule_timeslot(i)

    def _initial_states(self) -> list[NodeState]:
        cfg, params, g = self.config, self.params, self.g
        init_rng = _rng(cfg.seed, "init")
        cond = cfg.initial_condition
        if cond == "star_blocker":
            return star_blocker(g.n - 1, cfg.xi, params, init_rng)
        if cond == "safe":
            return safe_states(g, params, init_rng, clock=init_rng.randrange(self.c))
        if cond == "arbitrary":
            states = [arbitrary_state(i, params, init_rng, id_space=g.n) for i in range(g.n)]
        elif cond == "synchronized_clocks":
            c0 = init_rng.randrange(self.c)
            states = [initial_state(i, params, c0, init_rng) for i in range(g.n)]
        else:
            states = [initial_state(i, params, init_rng.randrange(self.c), init_rng) for i in range(g.n)]
        if cfg.initial_clocks is not None:
            states = [replace(s, clock=ModularClock(v % self.c, self.c)) for s, v in zip(states, cfg.initial_clocks)]
        return states

    # clock helpers -----------------------------------------------------
    def clock_at(self, i: int, tick: int) -> int:
        return (tick + self.offsets[i]) % self.c

    def _with_clock(self, i: int) -> NodeState:
        s = self.states[i]
        now = self.clock_at(i, self.tick)
        if s.clock.value != now:
            s = replace(s, clock=ModularClock(now, self.c))
        return s

    def _store(self, i: int, new: NodeState) -> None:
        old_clock = self.clock_at(i, self.tick)
        self.states[i] = new
        if new.clock.value != old_clock:
            self.offsets[i] = (new.clock.value - self.tick) % self.c
            self._schedule_timeslot(i)

    def _schedule_timeslot(self, i: int) -> None:
        self.version[i] += 1
        wait = (-self.clock_at(i, self.tick)) % self.p.xi
        self._push(self.tick + wait, _TIMESLOT, i, ("slot", self.version[i]))

    def _push(self, tick: int, phase: int, node: int, payload) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (tick, phase, node, self.seq, payload))

    def _count_event(self, k: int = 1) -> None:
        self._events += k
        if self._events > self.config.max_trace_events:
            raise TraceOverflow(f"trace exceeded {self.config.max_trace_events} events")

    def _step(self, i: int, kind: str) -> None:
        if self.config.record_steps:
            self._count_event()
            self.trace.steps.append(StepRecord(self.tick, i, kind, _digest(self.states[i])))

    # snapshots and faults ---------------------------------------------
    def snapshot(self, frame: int) -> ConfigurationSnapshot:
        nodes = tuple(
            NodeView(self.clock_at(i, self.tick), s.status, s.slot, s.fi.entries) for i, s in enumerate(self.states)
        )
        return ConfigurationSnapshot(frame, self.tick, nodes, tuple(sorted(self.channels)))

    def _apply_fault(self, fault: FaultSpec) -> None:
        new = inject_fault(self.states, fault.scope, self.params, self.fault_rng, fault.k)
        victims = sorted(new)
        for i, st in new.items():
            self.states[i] = st
            self.offsets[i] = (st.clock.value - self.tick) % self.c
            self._schedule_timeslot(i)
            self._step(i, "fault")
        touched = [key for key in self.channels if key[0] in new or key[1] in new]
        for key in touched:
            if fault.channels == "clear":
                del self.channels[key]
            else:
                size = self.fault_rng.randint(0, 40)
                self.channels[key] = bytes(self.fault_rng.randrange(256) for _ in range(size))
        self.trace.faults.append((fault.frame, tuple(victims)))
        log.debug("fault at frame %d corrupted nodes %s", fault.frame, victims)

    # event handlers ----------------------------------------------------
    def _timeslot(self, i: int) -> None:
        state = self._with_clock(i)

        def fetch() -> int:
            self.fetch_seq[i] += 1
            return self.fetch_seq[i]

        new, pkt = on_timeslot(state, self.params, fetch, self.node_rng[i])
        self._store(i, new)
        self._step(i, "timeslot")
        self._push(self.tick + self.p.xi, _TIMESLOT, i, ("slot", self.version[i]))
        if pkt is not None:
            emit_at = apply_jitter(self.tick, self.config.jitter, self.env_rng)
            if emit_at == self.tick:
                self._emit(i, pkt)
            else:
                self._push(emit_at, _EMIT, i, pkt)

    def _emit(self, i: int, pkt) -> None:
        self._count_event()
        raw = encode_packet(pkt)
        tx = Transmission(i, self.tick, self.config.airtime, pkt)
        self.active_tx.append(tx)
        self.trace.counters["transmissions"] += 1
        for j in self.g.adj[i]:
            self.channels[(i, j)] = channel_write(self.channels.get((i, j)), raw)
        self.tx_stamp[(i, self.tick)] = self.clock_at(i, self.tick)
        self._push(tx.end, _DELIVER, i, tx)

    def _deliver_batch(self, txs: list[Transmission]) -> None:
        g = self.g
        self.active_tx = [t for t in self.active_tx if t.end > self.tick - self.p.xi]
        receptions = []
        for tx in txs:
            i = tx.sender
            t_sender = self.tx_stamp.pop((i, tx.start))
            survivors = []
            outcomes = {}
            concurrent = False
            for j in sorted(g.adj[i]):
                if interferers(tx, j, self.active_tx, g):
                    concurrent = True
                    outcomes[j] = Cause.COLLISION
                    self.channels.pop((i, j), None)
                else:
                    survivors.append(j)
            omitted = adversarial_omit(self.config.omission, tx, survivors, self.env_rng, concurrent)
            for j in survivors:
                if j in omitted:
                    outcomes[j] = Cause.OMISSION
                    self.channels.pop((i, j), None)
                elif (i, j) in self.channels:
                    outcomes[j] = Cause.OK
                    receptions.append((j, i, tx, t_sender, self.channels.pop((i, j))))
            self.trace.transmissions.append(
                TxRecord(
                    tx.start,
                    tx.duration,
                    i,
                    "control" if tx.packet.is_control else "data",
                    tuple((j, outcomes[j].value) for j in sorted(outcomes)),
                )
            )
        receptions.sort(key=lambda r: (r[0], r[1]))
        cache: dict[bytes, object] = {}
        for j, i, tx, t_sender, raw in receptions:
            self._receive(j, i, tx, t_sender, raw, cache)

    def _receive(self, j: int, i: int, tx: Transmission, t_sender: int, raw: bytes, cache: dict) -> None:
        pkt = cache.get(raw)
        if pkt is None:
            try:
                pkt = decode_packet(raw)
            except ValueError:
                self.trace.counters["decode_errors"] += 1
                return
            cache[raw] = pkt
        state = self._with_clock(j)
        meta = ReceiveMeta(i, t_sender, self.clock_at(j, tx.start))
        was_active = state.active
        new, eff = on_receive(state, meta, pkt, self.params, self.node_rng[j])
        if eff.clock_adjusted:
            self.trace.counters["clock_adjustments"] += 1
        if eff.went_passive and was_active and not eff.clock_adjusted:
            self.trace.counters["conflicts"] += 1
        if eff.delivered is not None:
            self.trace.counters["deliveries"] += 1
            prev = self.last_delivered.get((i, j))
            if prev is not None and eff.delivered <= prev:
                self.trace.counters["out_of_order"] += 1
            self.last_delivered[(i, j)] = eff.delivered
        self._store(j, new)
        self._step(j, "receive")

    # main loop ---------------------------------------------------------
    def _safe_stop(self, snap: ConfigurationSnapshot, state: dict) -> bool:
        k = self.config.stop_after_safe
        if k is None:
            return False
        if not analysis.is_legal(snap, self.g):
            state["since"] = None
        elif state["since"] is None and analysis.is_safe(snap, self.g):
            state["since"] = snap.frame
        last_fault = max((f.frame for f in self.config.faults), default=0)
        since = state["since"]
        return since is not None and since >= last_fault and snap.frame - since >= k

    def run(self) -> Trace:
        cfg = self.config
        ft = self.p.frame_ticks
        end_tick = cfg.max_frames * ft
        faults = sorted(cfg.faults, key=lambda f: f.frame)
        fault_idx = 0
        next_frame = 0
        stop_state = {"since": None}
        while True:
            next_event = self.heap[0][0] if self.heap else end_tick + 1
            if next_frame * ft <= min(next_event, end_tick):
                self.tick = next_frame * ft
                while fault_idx < len(faults) and faults[fault_idx].frame <= next_frame:
                    if faults[fault_idx].frame == next_frame:
                        self._apply_fault(faults[fault_idx])
                    fault_idx += 1
                snap = self.snapshot(next_frame)
                self.trace.snapshots.append(snap)
                if next_frame >= cfg.max_frames or self._safe_stop(snap, stop_state):
                    break
                next_frame += 1
                continue
            tick, phase = self.heap[0][0], self.heap[0][1]
            self.tick = tick
            if phase == _DELIVER:
                batch = []
                while self.heap and self.heap[0][0] == tick and self.heap[0][1] == _DELIVER:
                    batch.append(heapq.heappop(self.heap)[4])
                self._deliver_batch(batch)
                continue
            _, _, node, _, payload = heapq.heappop(self.heap)
            if phase == _TIMESLOT:
                if payload[1] == self.version[node]:
                    self._timeslot(node)
            else:
                self._emit(node, payload)
        return self.trace


def run(config: SimConfig) -> Trace:
    return Simulation(config).run()
