"""Abstracted AODV route discovery with selfish dropping behaviors.

Only the control plane is modelled: RREQ floods, RREP unicasts back along the reverse path,
route and duplicate caches with timers. The RREQ and RREP headers carry the three extension
fields used by the cross-check (``next_to_source``, ``duplicate_flag`` and, for RREPs,
``next_to_destination``).
"""

import dataclasses
from dataclasses import dataclass, field
from enum import Enum, StrEnum

import numpy as np
from loguru import logger

from selfish_mesh.config import ScenarioConfig, Strategy
from selfish_mesh.topology import NodeId
from selfish_mesh.utils.errors import MalformedPacket, NoReversePath
from selfish_mesh.utils.helpers import quantize

NO_NODE: NodeId = -1
"""Sentinel for an unset node field."""


class PacketType(StrEnum):
    """Control packet types."""

    RREQ = "RREQ"
    RREP = "RREP"


@dataclass(frozen=True, slots=True)
class RreqPacket:
    """One transmission of a route request."""

    src_id: NodeId
    dest_id: NodeId
    src_seq_num: int
    dest_seq_num: int
    bcast_id: int
    ttl: int
    sender: NodeId
    next_to_source: NodeId = NO_NODE
    duplicate_flag: bool = False

    type = PacketType.RREQ

    @property
    def flood_key(self) -> tuple[NodeId, int]:
        """``(src_id, bcast_id)``, the identity of the flood."""
        return self.src_id, self.bcast_id


@dataclass(frozen=True, slots=True)
class RrepPacket:
    """One hop of a route reply travelling back toward the RREQ source."""

    src_id: NodeId
    dest_id: NodeId
    dest_seq_num: int
    hop_count: int
    sender: NodeId
    receiver: NodeId
    bcast_id: int
    next_to_source: NodeId = NO_NODE
    duplicate_flag: bool = False
    next_to_destination: NodeId = NO_NODE

    type = PacketType.RREP

    @property
    def flood_key(self) -> tuple[NodeId, int]:
        """``(src_id, bcast_id)`` of the RREQ this reply answers."""
        return self.src_id, self.bcast_id


Packet = RreqPacket | RrepPacket


@dataclass(frozen=True, slots=True)
class RouteEntry:
    """A forward route to ``dest``."""

    dest: NodeId
    next_hop: NodeId
    dest_seq_num: int
    hop_count: int
    expires_at: float

    def valid(self, now: float) -> bool:
        """Whether the entry may still answer or forward."""
        return now < self.expires_at


class BehaviorKind(Enum):
    """Honest nodes never drop intentionally."""

    HONEST = "Honest"
    SELFISH = "Selfish"


@dataclass(frozen=True)
class NodeBehavior:
    """How a node treats control packets it is obliged to forward."""

    kind: BehaviorKind = BehaviorKind.HONEST
    strategy: Strategy | None = None
    drop_prob: float = 0.0

    @property
    def selfish(self) -> bool:
        """Whether this is a planted selfish node."""
        return self.kind is BehaviorKind.SELFISH

    def drops(self, strategy: Strategy) -> bool:
        """Whether this behavior applies ``strategy``."""
        return self.selfish and self.strategy is strategy


HONEST = NodeBehavior()


@dataclass
class SeenRreq:
    """Duplicate-suppression and reverse-path record for one flood."""

    first_sender: NodeId
    next_to_source: NodeId
    copies_heard: int
    reverse_timer_expires: float


@dataclass(frozen=True)
class AodvParams:
    """Protocol constants shared by every node."""

    initial_ttl: int = 35
    route_lifetime: float = 10.0
    reverse_timeout: float = 3.0

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "AodvParams":
        """Take the protocol constants from a scenario."""
        return cls(
            initial_ttl=config.initial_ttl,
            route_lifetime=config.route_lifetime,
            reverse_timeout=config.rrep_timeout,
        )


@dataclass(frozen=True)
class Rebroadcast:
    """Forward the flood to every neighbor."""

    packet: RreqPacket


@dataclass(frozen=True)
class SendRrep:
    """Answer a route request."""

    packet: RrepPacket


@dataclass(frozen=True)
class ForwardRrep:
    """Relay a route reply one hop toward the source."""

    packet: RrepPacket


@dataclass(frozen=True)
class Consume:
    """The RREQ source received its reply and installed ``route``."""

    route: RouteEntry


@dataclass(frozen=True)
class Drop:
    """Discard the packet; ``reason`` is written to the trace."""

    reason: str


@dataclass(frozen=True)
class Ignore:
    """Duplicate or irrelevant copy."""


Action = Rebroadcast | SendRrep | ForwardRrep | Consume | Drop | Ignore


@dataclass
class NodeState:
    """Routing state of one mesh router.

    Mutated only by the simulation's single-threaded event loop; every method is a deterministic
    function of the state, the packet and, for selfish nodes, one draw from ``rng``.
    """

    id: NodeId
    behavior: NodeBehavior = HONEST
    params: AodvParams = field(default_factory=AodvParams)
    route_table: dict[NodeId, RouteEntry] = field(default_factory=dict)
    seen_rreq: dict[tuple[NodeId, int], SeenRreq] = field(default_factory=dict)
    own_bcast_counter: int = 0
    own_seq_num: int = 0

    def valid_route(self, dest: NodeId, now: float) -> RouteEntry | None:
        """Return the unexpired route to ``dest``, if any."""
        route = self.route_table.get(dest)
        if route is not None and route.valid(now):
            return route
        return None

    def purge_expired(self, now: float) -> None:
        """Delete reverse-path entries whose timer has fired."""
        expired = [k for k, v in self.seen_rreq.items() if v.reverse_timer_expires <= now]
        for key in expired:
            del self.seen_rreq[key]

    def originate_rreq(self, dest: NodeId, now: float) -> RreqPacket:
        """Start a route discovery toward ``dest``.

        Args:
            dest: The destination node.
            now: Current simulation time.

        Returns:
            The RREQ to broadcast. Its ``bcast_id`` is strictly larger than any earlier one from
            this node.
        """
        self.own_bcast_counter += 1
        self.own_seq_num += 1
        stale = self.route_table.get(dest)

        packet = RreqPacket(
            src_id=self.id,
            dest_id=dest,
            src_seq_num=self.own_seq_num,
            dest_seq_num=stale.dest_seq_num if stale else 0,
            bcast_id=self.own_bcast_counter,
            ttl=self.params.initial_ttl,
            sender=self.id,
        )
        self.seen_rreq[packet.flood_key] = SeenRreq(
            first_sender=self.id,
            next_to_source=NO_NODE,
            copies_heard=1,
            reverse_timer_expires=quantize(now + self.params.reverse_timeout),
        )
        logger.trace(f"AODV: {self.id} originates RREQ {packet.flood_key} toward {dest}")
        return packet

    def handle_rreq(self, pkt: RreqPacket, now: float, rng: np.random.Generator) -> Action:
        """React to a delivered RREQ copy.

        Args:
            pkt: The received copy.
            now: Current simulation time.
            rng: The behavior substream, drawn from only by DropReq nodes.

        Returns:
            The action the node takes.

        Raises:
            MalformedPacket: If the copy carries a negative ttl.
        """
        if pkt.ttl < 0:
            msg = f"RREQ {pkt.flood_key} arrived at {self.id} with ttl {pkt.ttl}"
            raise MalformedPacket(msg)

        self.purge_expired(now)
        seen = self.seen_rreq.get(pkt.flood_key)
        if seen is not None:
            seen.copies_heard += 1
            return Ignore()
        if pkt.src_id == self.id:
            return Ignore()

        seen = SeenRreq(
            first_sender=pkt.sender,
            next_to_source=self.id if pkt.sender == pkt.src_id else pkt.next_to_source,
            copies_heard=1,
            reverse_timer_expires=quantize(now + self.params.reverse_timeout),
        )
        self.seen_rreq[pkt.flood_key] = seen

        # Dropping only applies to forwarding duties; a destination always answers.
        if pkt.dest_id == self.id:
            self.own_seq_num = max(self.own_seq_num, pkt.dest_seq_num) + 1
            return SendRrep(self._reply(pkt, seen, hop_count=0, dest_seq_num=self.own_seq_num))

        if self.behavior.drops(Strategy.DROP_REQ) and rng.random() < self.behavior.drop_prob:
            return Drop("drop_req")

        route = self.valid_route(pkt.dest_id, now)
        if route is not None and not self.behavior.drops(Strategy.DROP_REP):
            return SendRrep(
                self._reply(pkt, seen, hop_count=route.hop_count, dest_seq_num=route.dest_seq_num)
            )

        if pkt.ttl == 0:
            return Drop("ttl_expired")

        return Rebroadcast(
            dataclasses.replace(
                pkt,
                ttl=pkt.ttl - 1,
                sender=self.id,
                next_to_source=seen.next_to_source,
                duplicate_flag=False,
            )
        )

    def prepare_broadcast(self, pkt: RreqPacket) -> RreqPacket:
        """Fix ``duplicate_flag`` at the moment a rebroadcast leaves the node.

        The flag is set when the node overheard at least two copies of the flood (the copy it
        is forwarding plus another) before transmitting.
        """
        seen = self.seen_rreq.get(pkt.flood_key)
        duplicate = seen is not None and seen.copies_heard >= 2  # noqa: PLR2004
        if duplicate == pkt.duplicate_flag:
            return pkt
        return dataclasses.replace(pkt, duplicate_flag=duplicate)

    def handle_rrep(self, pkt: RrepPacket, now: float, rng: np.random.Generator) -> Action:
        """React to an RREP unicast to this node.

        Args:
            pkt: The received reply; ``pkt.receiver`` must be this node.
            now: Current simulation time.
            rng: The behavior substream, drawn from only by DropRep nodes.

        Returns:
            ``Consume`` at the RREQ source, otherwise ``ForwardRrep`` or ``Drop``.

        Raises:
            MalformedPacket: If the reply is addressed to another node.
            NoReversePath: If the reverse-path entry expired before the reply arrived.
        """
        if pkt.receiver != self.id:
            msg = f"RREP for {pkt.receiver} handed to {self.id}"
            raise MalformedPacket(msg)

        self.purge_expired(now)
        forward_route = RouteEntry(
            dest=pkt.dest_id,
            next_hop=pkt.sender,
            dest_seq_num=pkt.dest_seq_num,
            hop_count=pkt.hop_count + 1,
            expires_at=quantize(now + self.params.route_lifetime),
        )

        if pkt.src_id == self.id:
            self.route_table[pkt.dest_id] = forward_route
            return Consume(forward_route)

        seen = self.seen_rreq.get(pkt.flood_key)
        if seen is None:
            msg = f"{self.id} has no reverse path for {pkt.flood_key}"
            raise NoReversePath(msg)

        if self.behavior.drops(Strategy.DROP_REP) and rng.random() < self.behavior.drop_prob:
            return Drop("drop_rep")

        self.route_table[pkt.dest_id] = forward_route
        return ForwardRrep(
            dataclasses.replace(
                pkt,
                hop_count=pkt.hop_count + 1,
                sender=self.id,
                receiver=seen.first_sender,
                next_to_source=seen.next_to_source,
                next_to_destination=self._next_to_destination(pkt.src_id, seen),
            )
        )

    def _reply(
        self, pkt: RreqPacket, seen: SeenRreq, *, hop_count: int, dest_seq_num: int
    ) -> RrepPacket:
        return RrepPacket(
            src_id=pkt.src_id,
            dest_id=pkt.dest_id,
            dest_seq_num=dest_seq_num,
            hop_count=hop_count,
            sender=self.id,
            receiver=seen.first_sender,
            bcast_id=pkt.bcast_id,
            next_to_source=seen.next_to_source,
            duplicate_flag=False,
            next_to_destination=self._next_to_destination(pkt.src_id, seen),
        )

    @staticmethod
    def _next_to_destination(src_id: NodeId, seen: SeenRreq) -> NodeId:
        # The receiver forwards to the source only when it is the source's own neighbor.
        if seen.first_sender != src_id and seen.first_sender == seen.next_to_source:
            return src_id
        return NO_NODE
