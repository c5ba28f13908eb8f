import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sstdma.frame_info import FrameInfoEntry, Kind, Occurrence
from sstdma.medium import (
    Cause,
    DeliveryOutcome,
    OmissionPolicy,
    Transmission,
    adversarial_omit,
    channel_write,
    decode_packet,
    encode_packet,
    resolve,
)
from sstdma.protocol import Packet, Status
from sstdma.topology import Topology, grid, path, star


def outcome_map(outs):
    return {(o.sender, o.receiver): o.cause for o in outs}


def tick_oracle(transmissions, g):
    # [DERIVED] mark each tick as busy per node, then test every copy tick by tick
    busy = {}
    for tx in transmissions:
        for t in range(tx.start, tx.end):
            busy.setdefault(t, set()).add(tx.sender)
    out = {}
    for tx in transmissions:
        for j in g.adj[tx.sender]:
            zone = (g.adj[tx.sender] | g.adj[j] | {j}) - {tx.sender}
            ok = all(not (busy.get(t, set()) & zone) for t in range(tx.start, tx.end))
            out[(tx.sender, j)] = Cause.OK if ok else Cause.COLLISION
    return out


def test_single_transmission_reaches_everyone():
    g = star(4)
    outs = resolve([Transmission(4, 0, 20)], g)
    assert {o.receiver for o in outs if o.delivered} == {0, 1, 2, 3}


def test_one_tick_overlap_kills_both():
    g = path(3)
    outs = outcome_map(resolve([Transmission(0, 0, 20), Transmission(1, 19, 20)], g))
    assert outs == {(0, 1): Cause.COLLISION, (1, 0): Cause.COLLISION, (1, 2): Cause.COLLISION}


def test_touching_intervals_do_not_collide():
    outs = resolve([Transmission(0, 0, 20), Transmission(1, 20, 20)], path(2))
    assert all(o.delivered for o in outs)


def test_hidden_node():
    # 3 - 0 - 1 - 2: nodes 0 and 2 are hidden from each other and both talk to 1
    g = Topology.from_edges(4, [(3, 0), (0, 1), (1, 2)])
    outs = outcome_map(resolve([Transmission(0, 0, 20), Transmission(2, 5, 20)], g))
    assert outs[(0, 1)] is Cause.COLLISION and outs[(2, 1)] is Cause.COLLISION
    assert outs[(0, 3)] is Cause.OK


@st.composite
def scenarios(draw):
    n = draw(st.integers(2, 7))
    edges = [(i, draw(st.integers(0, i - 1))) for i in range(1, n)]
    edges += [(u, v) for u in range(n) for v in range(u) if draw(st.booleans()) and draw(st.booleans())]
    g = Topology.from_edges(n, edges)
    senders = draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n, unique=True))
    txs = [Transmission(s, draw(st.integers(0, 60)), draw(st.integers(1, 20))) for s in senders]
    return g, txs


@given(scenarios())
def test_resolve_matches_tick_oracle(sc):
    g, txs = sc
    assert outcome_map(resolve(txs, g)) == tick_oracle(txs, g)


@given(scenarios(), st.permutations(range(7)))
def test_resolve_is_invariant_under_relabelling(sc, perm):
    g, txs = sc
    perm = [p for p in perm if p < g.n]
    h = g.relabel(perm)
    moved = [Transmission(perm[t.sender], t.start, t.duration) for t in txs]
    want = {(perm[i], perm[j]): c for (i, j), c in outcome_map(resolve(txs, g)).items()}
    assert outcome_map(resolve(moved, h)) == want


@given(scenarios(), st.integers(0, 60), st.integers(1, 20), st.integers(0, 6))
def test_extra_transmission_never_helps(sc, start, dur, who):
    g, txs = sc
    who = who % g.n
    if any(t.sender == who for t in txs):
        return
    before = outcome_map(resolve(txs, g))
    after = outcome_map(resolve(txs + [Transmission(who, start, dur)], g))
    for key, cause in before.items():
        if cause is Cause.COLLISION:
            assert after[key] is Cause.COLLISION


def test_channel_holds_latest_message():
    assert channel_write(None, b"m") == b"m"
    assert channel_write(b"m0", b"m1") == b"m1"


def test_delivery_outcome_consistency():
    with pytest.raises(ValueError):
        DeliveryOutcome(0, 1, 0, True, Cause.COLLISION)


def test_omission_policies():
    tx = Transmission(0, 0, 20)
    rng = random.Random(0)
    assert adversarial_omit(OmissionPolicy(), tx, [1, 2], rng) == frozenset()
    pol = OmissionPolicy.parse("targeted(2)")
    assert adversarial_omit(pol, tx, [1, 2, 3], rng) == {2}
    assert adversarial_omit(pol, tx, [1, 3], rng) == frozenset()
    always = OmissionPolicy.parse("always_when_concurrent")
    assert adversarial_omit(always, tx, [1, 3], rng, concurrent=True) == {1, 3}
    assert adversarial_omit(always, tx, [1, 3], rng, concurrent=False) == frozenset()


def test_random_omission_rate():
    pol = OmissionPolicy.parse("random(0.2)")
    rng = random.Random("omit")
    tx = Transmission(0, 0, 20)
    hits = sum(len(adversarial_omit(pol, tx, [1], rng)) for _ in range(10_000))
    assert abs(hits / 10_000 - 0.2) <= 0.02


@pytest.mark.parametrize("text", ["random(2)", "sometimes", "none(3)", "random(x)"])
def test_bad_policies(text):
    with pytest.raises(ValueError):
        OmissionPolicy.parse(text)


def test_policy_round_trip():
    for text in ("none", "random(0.25)", "targeted(1,4)", "always_when_concurrent"):
        assert str(OmissionPolicy.parse(text)) == text


entries = st.builds(
    FrameInfoEntry,
    st.integers(0, 2**32 - 1),
    st.sampled_from(list(Kind)),
    st.just(Occurrence.LOCAL),
    st.integers(0, 2**64 - 1),
)


@given(st.sampled_from(list(Status)), st.lists(entries, max_size=30), st.one_of(st.none(), st.integers(0, 2**64 - 1)))
def test_packet_wire_round_trip(status, fi, data):
    pkt = Packet(status, tuple(fi), data)
    back = decode_packet(encode_packet(pkt))
    assert back.sender_status is status and back.fi_payload == tuple(fi)
    # sequence number 0 travels as 8 zero bytes and stays data
    assert back.data == data


@given(st.binary(max_size=60))
def test_decoder_rejects_or_parses_garbage(buf):
    try:
        pkt = decode_packet(buf)
    except ValueError:
        return
    assert encode_packet(pkt) == buf


def test_decode_errors():
    good = encode_packet(Packet(Status.ACT, (), 7))
    odd = good[:3] + b"\x00\x03abc"
    for bad in (b"", good[:1], bytes([5]) + good[1:], good[:-1], good + b"x", odd):
        with pytest.raises(ValueError):
            decode_packet(bad)


def test_grid_neighbours_only_hear_their_own_zone():
    g = grid(3, 1)
    outs = outcome_map(resolve([Transmission(0, 0, 20), Transmission(2, 0, 20)], g))
    assert outs == {(0, 1): Cause.COLLISION, (2, 1): Cause.COLLISION}
