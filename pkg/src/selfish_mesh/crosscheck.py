"""Header-based cross-checking of forwarding duties.

A monitor that overhears a control packet being delivered to one of its neighbors knows, from
the extended header fields, whether that neighbor now owes a transmission: a fresh RREQ
(``duplicate_flag`` unset) must be rebroadcast or answered, and an RREP must be relayed toward
``next_to_destination``. Duties that are not met before their deadline become violations. The
evidence is then fused with the statistical verdicts.
"""

import heapq
from collections import deque
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from enum import StrEnum

from loguru import logger

from selfish_mesh.aodv import NO_NODE, Packet, PacketType, RrepPacket, RreqPacket
from selfish_mesh.monitor import ClockTick, LmuKey
from selfish_mesh.stats import ClassificationResult, Verdict
from selfish_mesh.topology import NodeId
from selfish_mesh.utils.errors import UnknownNeighbor


class ObligationKind(StrEnum):
    """What a monitored node owes."""

    RREQ_REBROADCAST = "RreqRebroadcast"
    RREP_FORWARD = "RrepForward"


class ObligationStatus(StrEnum):
    """Lifecycle of an obligation; leaves Pending exactly once."""

    PENDING = "Pending"
    FULFILLED = "Fulfilled"
    VIOLATED = "Violated"


@dataclass(slots=True)
class ForwardObligation:
    """A transmission a monitored node is expected to make."""

    monitored: NodeId
    lmu: LmuKey
    kind: ObligationKind
    deadline: float
    expected_next: NodeId | None = None
    status: ObligationStatus = ObligationStatus.PENDING
    window: int = 0

    def fulfilled_by(self, packet: Packet) -> bool:
        """Whether the monitored node's transmission ``packet`` discharges this obligation."""
        if packet.sender != self.monitored or LmuKey.of(packet) != self.lmu:
            return False
        if self.kind is ObligationKind.RREQ_REBROADCAST:
            # Answering the request is as good as passing it on.
            return True
        if not isinstance(packet, RrepPacket):
            return False
        return self.expected_next is None or packet.receiver == self.expected_next


@dataclass
class Evidence:
    """Obligation and violation counts for one monitored node."""

    obligations_req: int = 0
    obligations_rep: int = 0
    violations_req: int = 0
    violations_rep: int = 0

    @property
    def obligations_total(self) -> int:
        """Obligations of both kinds."""
        return self.obligations_req + self.obligations_rep

    @property
    def violations(self) -> int:
        """Violations of both kinds."""
        return self.violations_req + self.violations_rep

    def __add__(self, other: "Evidence") -> "Evidence":
        """Counter-wise sum."""
        return Evidence(
            self.obligations_req + other.obligations_req,
            self.obligations_rep + other.obligations_rep,
            self.violations_req + other.violations_req,
            self.violations_rep + other.violations_rep,
        )

    def count_obligation(self, kind: ObligationKind) -> None:
        """Count a new obligation of ``kind``."""
        if kind is ObligationKind.RREQ_REBROADCAST:
            self.obligations_req += 1
        else:
            self.obligations_rep += 1

    def count_violation(self, kind: ObligationKind) -> None:
        """Count a violated obligation of ``kind``."""
        if kind is ObligationKind.RREQ_REBROADCAST:
            self.violations_req += 1
        else:
            self.violations_rep += 1

    def to_dict(self) -> dict[str, int]:
        """JSON-friendly rendering, totals included."""
        return asdict(self) | {"obligations_total": self.obligations_total}


@dataclass(frozen=True)
class FusionPolicy:
    """Thresholds for combining header evidence with statistical verdicts."""

    hard_ratio: float = 0.5
    min_obligations: int = 5
    confirm_min: int = 1

    def hard_evidence(self, evidence: Evidence) -> bool:
        """Whether the violations alone prove selfishness.

        True when ``violations >= hard_ratio * max(obligations_total, min_obligations)`` and at
        least one violation was seen.
        """
        violations = evidence.violations
        return violations > 0 and violations >= self.hard_ratio * max(
            evidence.obligations_total, self.min_obligations
        )

    def clears(self, evidence: Evidence) -> bool:
        """Whether the node met ``min_obligations`` or more duties of each kind and missed none."""
        return (
            evidence.violations == 0
            and evidence.obligations_req >= self.min_obligations
            and evidence.obligations_rep >= self.min_obligations
        )


class EvidenceLedger:
    """Obligation tracking at one monitor, windowed like its transition matrices.

    Counts are booked into the observation window in which the obligation was created. The
    ledger keeps the same ``d`` closed windows as the monitor's observation ring.
    """

    def __init__(
        self,
        monitor: NodeId,
        neighbors: frozenset[NodeId],
        *,
        rreq_timeout: float,
        rrep_timeout: float,
        windows: int,
    ) -> None:
        self.monitor = monitor
        self.neighbors = neighbors
        self.rreq_timeout = rreq_timeout
        self.rrep_timeout = rrep_timeout
        self.windows = windows
        self.window_index = 0
        self._current = self._empty_window()
        self._closed: deque[dict[NodeId, Evidence]] = deque(maxlen=windows)
        self._pending: dict[tuple[NodeId, LmuKey, ObligationKind], ForwardObligation] = {}
        self._deadlines: list[tuple[float, int, ForwardObligation]] = []
        self._pushes = 0
        self._sent: set[tuple[NodeId, LmuKey, PacketType]] = set()
        self._sent_before: set[tuple[NodeId, LmuKey, PacketType]] = set()

    def _empty_window(self) -> dict[NodeId, Evidence]:
        return {n: Evidence() for n in sorted(self.neighbors)}

    def _window_of(self, index: int) -> dict[NodeId, Evidence] | None:
        if index == self.window_index:
            return self._current
        age = self.window_index - index
        if 1 <= age <= len(self._closed):
            return self._closed[-age]
        return None

    def pending(self) -> list[ForwardObligation]:
        """Unresolved obligations, in creation order."""
        return list(self._pending.values())

    def register_obligation(
        self, packet: Packet, recipient: NodeId, now: float
    ) -> ForwardObligation | None:
        """Create the duty, if any, that delivering ``packet`` to ``recipient`` imposes.

        Args:
            packet: The transmission the monitor overheard.
            recipient: The monitored neighbor it was delivered to.
            now: Delivery time.

        Returns:
            The new pending obligation, or None when the delivery imposes nothing new.

        Raises:
            UnknownNeighbor: If ``recipient`` is not monitored here.
        """
        if recipient not in self.neighbors:
            msg = f"{recipient} is not a neighbor of monitor {self.monitor}"
            raise UnknownNeighbor(msg)

        lmu = LmuKey.of(packet)
        if isinstance(packet, RreqPacket):
            if (
                packet.duplicate_flag
                or packet.ttl <= 0
                or recipient in {packet.dest_id, packet.src_id}
            ):
                return None
            kind = ObligationKind.RREQ_REBROADCAST
            deadline = now + self.rreq_timeout
            expected_next = None
            # A reply from cache answers the flood as well as a rebroadcast.
            acted = (PacketType.RREQ, PacketType.RREP)
        else:
            if recipient != packet.receiver or recipient == packet.src_id:
                return None
            kind = ObligationKind.RREP_FORWARD
            deadline = now + self.rrep_timeout
            expected_next = (
                None if packet.next_to_destination == NO_NODE else packet.next_to_destination
            )
            acted = (PacketType.RREP,)

        key = (recipient, lmu, kind)
        if key in self._pending or any(
            self._already_sent(recipient, lmu, packet_type) for packet_type in acted
        ):
            return None

        obligation = ForwardObligation(
            monitored=recipient,
            lmu=lmu,
            kind=kind,
            deadline=deadline,
            expected_next=expected_next,
            window=self.window_index,
        )
        self._pending[key] = obligation
        self._current[recipient].count_obligation(kind)
        self._pushes += 1
        heapq.heappush(self._deadlines, (deadline, self._pushes, obligation))
        return obligation

    def resolve_obligations(self, event: Packet | ClockTick, now: float) -> list[ForwardObligation]:
        """Expire due obligations, then let an overheard transmission fulfill pending ones.

        Args:
            event: A transmission the monitor heard, or a `ClockTick`.
            now: Observation time.

        Returns:
            Obligations that left Pending, in resolution order.
        """
        changed = self._expire(now)
        if isinstance(event, ClockTick) or event.sender not in self.neighbors:
            return changed

        lmu = LmuKey.of(event)
        self._sent.add((event.sender, lmu, event.type))

        for kind in ObligationKind:
            obligation = self._pending.get((event.sender, lmu, kind))
            if obligation is not None and obligation.fulfilled_by(event):
                obligation.status = ObligationStatus.FULFILLED
                del self._pending[(event.sender, lmu, kind)]
                changed.append(obligation)

        return changed

    def rollover(self, now: float) -> None:
        """Expire due obligations and close the current window."""
        self._expire(now)
        self._closed.append(self._current)
        self._current = self._empty_window()
        self.window_index += 1
        self._sent_before = self._sent
        self._sent = set()

    def snapshot(self) -> dict[NodeId, Evidence]:
        """Evidence per neighbor, summed over the retained closed windows."""
        totals = self._empty_window()
        for window in self._closed:
            for node, evidence in window.items():
                totals[node] = totals[node] + evidence
        return totals

    def _already_sent(self, node: NodeId, lmu: LmuKey, packet_type: PacketType) -> bool:
        key = (node, lmu, packet_type)
        return key in self._sent or key in self._sent_before

    def _expire(self, now: float) -> list[ForwardObligation]:
        expired: list[ForwardObligation] = []
        while self._deadlines and self._deadlines[0][0] <= now:
            _, _, obligation = heapq.heappop(self._deadlines)
            if obligation.status is not ObligationStatus.PENDING:
                continue
            obligation.status = ObligationStatus.VIOLATED
            del self._pending[(obligation.monitored, obligation.lmu, obligation.kind)]
            window = self._window_of(obligation.window)
            if window is not None:
                window[obligation.monitored].count_violation(obligation.kind)
            logger.trace(
                f"XCHECK: {self.monitor} saw {obligation.monitored} miss "
                f"{obligation.kind.value} for {tuple(obligation.lmu)}"
            )
            expired.append(obligation)
        return expired


def fuse(
    stat: ClassificationResult,
    evidence: Mapping[NodeId, Evidence],
    policy: FusionPolicy,
    *,
    enabled: bool = True,
) -> dict[NodeId, Verdict]:
    """Combine statistical verdicts with cross-check evidence.

    A node is Selfish on hard evidence, or when the statistics say Selfish and at least
    ``confirm_min`` violations back it up. A statistical Selfish verdict is overridden to
    Cooperative once the node met ``min_obligations`` or more duties of each packet kind without
    a violation. Everything else keeps the statistical verdict.

    Args:
        stat: The monitor's statistical classification.
        evidence: Ledger snapshot for the same neighbors.
        policy: Fusion thresholds.
        enabled: When False the statistical verdicts are returned unchanged.

    Returns:
        The fused verdict per node.
    """
    if not enabled:
        return dict(stat.verdicts)

    fused: dict[NodeId, Verdict] = {}
    for node, verdict in stat.verdicts.items():
        counts = evidence.get(node, Evidence())
        if policy.hard_evidence(counts):
            fused[node] = Verdict.SELFISH
        elif verdict is Verdict.SELFISH and counts.violations >= policy.confirm_min:
            fused[node] = Verdict.SELFISH
        elif verdict is Verdict.SELFISH and policy.clears(counts):
            fused[node] = Verdict.COOPERATIVE
        else:
            fused[node] = verdict
    return fused

