# type: ignore
"""Test AODV route discovery on a four-node chain 0 - 1 - 2 - 3."""

import numpy as np
import pytest

from selfish_mesh.aodv import (
    NO_NODE,
    BehaviorKind,
    Consume,
    Drop,
    ForwardRrep,
    Ignore,
    NodeBehavior,
    NodeState,
    Rebroadcast,
    RouteEntry,
    RrepPacket,
    RreqPacket,
    SendRrep,
)
from selfish_mesh.config import Strategy
from selfish_mesh.utils import MalformedPacket, NoReversePath

SRC, A, B, DST = range(4)


def _rreq(**overrides) -> RreqPacket:
    fields = {
        "src_id": SRC,
        "dest_id": DST,
        "src_seq_num": 1,
        "dest_seq_num": 0,
        "bcast_id": 1,
        "ttl": 35,
        "sender": SRC,
    }
    return RreqPacket(**fields | overrides)


def _rrep(**overrides) -> RrepPacket:
    fields = {
        "src_id": SRC,
        "dest_id": DST,
        "dest_seq_num": 1,
        "hop_count": 0,
        "sender": DST,
        "receiver": B,
        "bcast_id": 1,
    }
    return RrepPacket(**fields | overrides)


def _selfish(strategy: Strategy, drop_prob: float = 1.0) -> NodeBehavior:
    return NodeBehavior(kind=BehaviorKind.SELFISH, strategy=strategy, drop_prob=drop_prob)


@pytest.fixture()
def rng():
    """A behavior substream."""
    return np.random.default_rng(0)


def test_originate_rreq():
    """Test originate_rreq."""
    node = NodeState(id=SRC)

    first = node.originate_rreq(DST, now=1.0)
    second = node.originate_rreq(DST, now=2.0)

    assert first.bcast_id == 1
    assert second.bcast_id == 2
    assert second.src_seq_num > first.src_seq_num
    assert first.ttl == 35
    assert first.sender == SRC
    assert first.next_to_source == NO_NODE
    assert not first.duplicate_flag
    assert node.seen_rreq[first.flood_key].reverse_timer_expires == 4.0

    # WHEN a stale route exists
    # THEN its sequence number is requested
    node.route_table[DST] = RouteEntry(DST, A, dest_seq_num=7, hop_count=3, expires_at=0.0)
    assert node.originate_rreq(DST, now=3.0).dest_seq_num == 7


def test_handle_rreq_rebroadcast(rng):
    """Test that intermediate nodes rebroadcast and stamp next_to_source."""
    # WHEN the source's neighbor receives the flood
    # THEN it names itself as next_to_source
    a = NodeState(id=A)
    action = a.handle_rreq(_rreq(), now=0.0, rng=rng)
    assert isinstance(action, Rebroadcast)
    assert action.packet.ttl == 34
    assert action.packet.sender == A
    assert action.packet.next_to_source == A

    # WHEN a node further away receives it
    # THEN next_to_source is carried along unchanged
    b = NodeState(id=B)
    action = b.handle_rreq(action.packet, now=0.01, rng=rng)
    assert isinstance(action, Rebroadcast)
    assert action.packet.next_to_source == A
    assert action.packet.ttl == 33


def test_handle_rreq_duplicates(rng):
    """Test duplicate suppression and the duplicate flag."""
    a = NodeState(id=A)
    action = a.handle_rreq(_rreq(), now=0.0, rng=rng)
    assert a.prepare_broadcast(action.packet) is action.packet

    # WHEN a second copy arrives before the rebroadcast leaves
    assert a.handle_rreq(_rreq(sender=B, ttl=33), now=0.001, rng=rng) == Ignore()
    assert a.seen_rreq[(SRC, 1)].copies_heard == 2

    # THEN the outgoing copy carries the duplicate flag
    assert a.prepare_broadcast(action.packet).duplicate_flag

    # The source ignores its own flood coming back
    src = NodeState(id=SRC)
    packet = src.originate_rreq(DST, now=0.0)
    assert src.handle_rreq(packet, now=0.01, rng=rng) == Ignore()


def test_handle_rreq_destination(rng):
    """Test that the destination answers toward the node it first heard."""
    dst = NodeState(id=DST)
    action = dst.handle_rreq(_rreq(sender=B, ttl=33, next_to_source=A), now=0.0, rng=rng)

    assert isinstance(action, SendRrep)
    assert action.packet.sender == DST
    assert action.packet.receiver == B
    assert action.packet.hop_count == 0
    assert action.packet.dest_seq_num == 1
    assert action.packet.next_to_source == A
    assert action.packet.next_to_destination == NO_NODE

    # A DropReq destination still answers
    selfish = NodeState(id=DST, behavior=_selfish(Strategy.DROP_REQ))
    assert isinstance(selfish.handle_rreq(_rreq(), now=0.0, rng=rng), SendRrep)


def test_handle_rreq_intermediate_reply(rng):
    """Test replies from an intermediate node that holds a fresh route."""
    route = RouteEntry(DST, B, dest_seq_num=5, hop_count=2, expires_at=10.0)

    a = NodeState(id=A, route_table={DST: route})
    action = a.handle_rreq(_rreq(), now=0.0, rng=rng)
    assert isinstance(action, SendRrep)
    assert action.packet.hop_count == 2
    assert action.packet.dest_seq_num == 5
    assert action.packet.receiver == SRC

    # WHEN the route has expired
    # THEN the flood continues
    assert isinstance(a.handle_rreq(_rreq(bcast_id=2), now=10.0, rng=rng), Rebroadcast)

    # WHEN the node is a DropRep node
    # THEN it does not answer from its cache
    selfish = NodeState(id=A, behavior=_selfish(Strategy.DROP_REP), route_table={DST: route})
    assert isinstance(selfish.handle_rreq(_rreq(), now=0.0, rng=rng), Rebroadcast)

    # WHEN a DropReq node holding a route drops the request
    # THEN it does not answer from its cache either
    dropper = NodeState(id=A, behavior=_selfish(Strategy.DROP_REQ), route_table={DST: route})
    assert dropper.handle_rreq(_rreq(), now=0.0, rng=rng) == Drop("drop_req")

    # WHEN it keeps the request
    keeper = NodeState(
        id=A, behavior=_selfish(Strategy.DROP_REQ, drop_prob=0.0), route_table={DST: route}
    )
    assert isinstance(keeper.handle_rreq(_rreq(), now=0.0, rng=rng), SendRrep)


@pytest.mark.parametrize(
    ("behavior", "packet", "expected"),
    [
        (_selfish(Strategy.DROP_REQ), _rreq(), Drop("drop_req")),
        (_selfish(Strategy.DROP_REP), _rreq(), None),
        (NodeBehavior(), _rreq(ttl=0), Drop("ttl_expired")),
        (_selfish(Strategy.DROP_REQ, drop_prob=0.0), _rreq(), None),
    ],
)
def test_handle_rreq_drops(behavior, packet, expected, rng):
    """Test selfish and ttl drops of route requests."""
    action = NodeState(id=A, behavior=behavior).handle_rreq(packet, now=0.0, rng=rng)
    if expected is None:
        assert isinstance(action, Rebroadcast)
    else:
        assert action == expected


def test_handle_rreq_malformed(rng):
    """Test that a negative ttl is rejected."""
    with pytest.raises(MalformedPacket):
        NodeState(id=A).handle_rreq(_rreq(ttl=-1), now=0.0, rng=rng)


def test_honest_nodes_never_draw(mocker):
    """Test that only selfish nodes consume the behavior substream."""
    rng = mocker.Mock()
    a = NodeState(id=A)
    a.handle_rreq(_rreq(), now=0.0, rng=rng)
    a.handle_rrep(_rrep(sender=B, receiver=A), now=0.1, rng=rng)

    rng.random.assert_not_called()


def test_handle_rrep_path(rng):
    """Test a reply travelling back along the reverse path."""
    src, a, b = NodeState(id=SRC), NodeState(id=A), NodeState(id=B)
    flood = src.originate_rreq(DST, now=0.0)
    flood = a.handle_rreq(flood, now=0.01, rng=rng).packet
    b.handle_rreq(flood, now=0.02, rng=rng)

    # WHEN B forwards the reply it has one hop to A, the source's neighbor
    # THEN next_to_destination names the source
    action = b.handle_rrep(_rrep(sender=DST, receiver=B), now=0.05, rng=rng)
    assert isinstance(action, ForwardRrep)
    assert action.packet.sender == B
    assert action.packet.receiver == A
    assert action.packet.hop_count == 1
    assert action.packet.next_to_source == A
    assert action.packet.next_to_destination == SRC
    assert b.route_table[DST].next_hop == DST

    # WHEN A forwards it to the source
    action = a.handle_rrep(action.packet, now=0.06, rng=rng)
    assert isinstance(action, ForwardRrep)
    assert action.packet.receiver == SRC
    assert action.packet.next_to_destination == NO_NODE

    # WHEN the source receives it
    # THEN the route is installed
    action = src.handle_rrep(action.packet, now=0.07, rng=rng)
    assert isinstance(action, Consume)
    assert action.route.next_hop == A
    assert action.route.hop_count == 3
    assert action.route.expires_at == 10.07
    assert src.valid_route(DST, now=1.0) == action.route
    assert src.valid_route(DST, now=10.07) is None


def test_handle_rrep_errors(rng):
    """Test misaddressed replies and expired reverse paths."""
    b = NodeState(id=B)
    with pytest.raises(MalformedPacket):
        b.handle_rrep(_rrep(receiver=A), now=0.0, rng=rng)

    # WHEN there was never a reverse path
    with pytest.raises(NoReversePath):
        b.handle_rrep(_rrep(), now=0.0, rng=rng)

    # WHEN the reverse path expired
    b.handle_rreq(_rreq(sender=A, ttl=34, next_to_source=A), now=0.0, rng=rng)
    assert isinstance(b.handle_rrep(_rrep(), now=2.9, rng=rng), ForwardRrep)
    with pytest.raises(NoReversePath):
        b.handle_rrep(_rrep(), now=3.0, rng=rng)


def test_handle_rrep_drop(rng):
    """Test that DropRep nodes swallow replies and learn no route."""
    b = NodeState(id=B, behavior=_selfish(Strategy.DROP_REP))
    b.handle_rreq(_rreq(sender=A, ttl=34, next_to_source=A), now=0.0, rng=rng)

    assert b.handle_rrep(_rrep(), now=0.1, rng=rng) == Drop("drop_rep")
    assert DST not in b.route_table

    # A DropReq node forwards replies
    c = NodeState(id=B, behavior=_selfish(Strategy.DROP_REQ))
    c.seen_rreq = b.seen_rreq
    assert isinstance(c.handle_rrep(_rrep(), now=0.1, rng=rng), ForwardRrep)
