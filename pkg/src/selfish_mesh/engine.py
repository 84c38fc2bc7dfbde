"""Deterministic discrete-event simulation of AODV route discovery with selfish nodes.

Events are processed in ``(time, sequence)`` order from a heap. Window and detection ticks are
scheduled before anything else, so at equal times they precede transmissions. All times are
quantized to microseconds when scheduled. Every random draw comes from one of four named
substreams of the scenario seed (placement, traffic, behavior, channel), so a seed and a config
determine every output byte.
"""

import heapq
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any

import inflect
import numpy as np
from loguru import logger

from selfish_mesh.aodv import (
    HONEST,
    AodvParams,
    BehaviorKind,
    Consume,
    Drop,
    ForwardRrep,
    Ignore,
    NodeBehavior,
    NodeState,
    Packet,
    Rebroadcast,
    RouteEntry,
    RreqPacket,
    SendRrep,
)
from selfish_mesh.config import ScenarioConfig
from selfish_mesh.harness import DetectionHarness, MetricsRecord, detection_windows
from selfish_mesh.topology import NodeId, Topology, build_topology, neighbors
from selfish_mesh.trace import drop_record, end_record, header_record, session_record, tx_record
from selfish_mesh.utils.errors import NoReversePath
from selfish_mesh.utils.helpers import quantize, substream

p = inflect.engine()


class EventKind(IntEnum):
    """What an event does when it fires."""

    SESSION_ARRIVAL = 1
    TRANSMISSION = 2
    DELIVERY = 3
    TIMER_EXPIRY = 4
    WINDOW_TICK = 5
    DETECTION_TICK = 6
    SIM_END = 7


class TimerKind(IntEnum):
    """Session timers."""

    ROUTE_REFRESH = 1
    DISCOVERY_TIMEOUT = 2


@dataclass(frozen=True, order=True, slots=True)
class Event:
    """A scheduled occurrence; ordered by time, then insertion sequence."""

    time: float
    sequence: int
    kind: EventKind = field(compare=False)
    payload: Any = field(default=None, compare=False)


@dataclass(frozen=True, slots=True)
class Timer:
    """Payload of a TIMER_EXPIRY event."""

    kind: TimerKind
    session: int
    bcast_id: int = 0


@dataclass(slots=True)
class Session:
    """A CBR flow; it keeps a route to its destination alive while active."""

    id: int
    src: NodeId
    dst: NodeId
    end: float
    awaiting: int | None = None

    def active(self, now: float) -> bool:
        """Whether the flow is still sending."""
        return now < self.end


class EventQueue:
    """Min-heap of events with strictly increasing insertion sequence numbers."""

    def __init__(self) -> None:
        self._heap: list[Event] = []
        self._sequence = 0

    def push(self, time: float, kind: EventKind, payload: Any = None) -> Event:
        """Schedule an event at ``time`` (quantized)."""
        self._sequence += 1
        event = Event(quantize(time), self._sequence, kind, payload)
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> Event:
        """Remove and return the earliest event."""
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        """Number of scheduled events."""
        return len(self._heap)

    def __iter__(self) -> Iterator[Event]:
        """Drain the queue in processing order."""
        while self._heap:
            yield self.pop()


def plant_selfish(config: ScenarioConfig, rng: np.random.Generator) -> tuple[NodeId, ...]:
    """Choose ``floor(selfish_fraction * node_count)`` distinct selfish nodes.

    Returns:
        The chosen node ids in ascending order.
    """
    count = math.floor(config.selfish_fraction * config.node_count + 1e-9)
    if count == 0:
        return ()
    chosen = rng.choice(config.node_count, size=count, replace=False)
    return tuple(sorted(int(n) for n in chosen))


@dataclass
class RunResult:
    """Everything one simulation run produced."""

    config: ScenarioConfig
    topology: Topology
    selfish: tuple[NodeId, ...]
    metrics: list[MetricsRecord]
    baseline_metrics: list[MetricsRecord]
    trace: list[dict[str, Any]] | None = None
    stats: dict[str, int] = field(default_factory=dict)

    @property
    def final(self) -> MetricsRecord | None:
        """Metrics of the last detection tick for the configured mode."""
        return self.metrics[-1] if self.metrics else None

    def to_dict(self, *, detail: bool = True) -> dict[str, Any]:
        """The metrics document written by the CLI."""
        return {
            "config": self.config.to_dict(),
            "selfish": list(self.selfish),
            "stats": self.stats,
            "metrics": [m.to_dict(detail=detail) for m in self.metrics],
            "baseline_metrics": [m.to_dict(detail=detail) for m in self.baseline_metrics],
        }


class Simulation:
    """One scenario: topology, AODV nodes, traffic and the detection harness.

    Args:
        config: The scenario.
        collect_trace: Keep the JSONL trace records in memory.

    Raises:
        ConnectivityUnreachable: If no connected layout can be placed.
    """

    def __init__(self, config: ScenarioConfig, *, collect_trace: bool = True) -> None:
        self.config = config
        self.traffic = substream(config.seed, "traffic")
        self.behavior = substream(config.seed, "behavior")
        self.channel = substream(config.seed, "channel")

        self.topology = build_topology(config, substream(config.seed, "placement"))
        self.selfish = plant_selfish(config, self.behavior)
        params = AodvParams.from_config(config)
        selfish_behavior = NodeBehavior(BehaviorKind.SELFISH, config.strategy, config.drop_prob)
        self.nodes = [
            NodeState(n, selfish_behavior if n in self.selfish else HONEST, params)
            for n in range(self.topology.node_count)
        ]
        self.harness = DetectionHarness(self.topology, config, self.selfish)
        self.queue = EventQueue()
        self.sessions: dict[int, Session] = {}
        self.stats = {"sessions": 0, "discoveries": 0, "transmissions": 0, "drops": 0}
        self.trace: list[dict[str, Any]] | None = None
        if collect_trace:
            self.trace = [header_record(config, self.topology, self.selfish)]

        self._handlers = {
            EventKind.SESSION_ARRIVAL: self._on_session_arrival,
            EventKind.TRANSMISSION: self._on_transmission,
            EventKind.DELIVERY: self._on_delivery,
            EventKind.TIMER_EXPIRY: self._on_timer,
            EventKind.WINDOW_TICK: self._on_window_tick,
            EventKind.DETECTION_TICK: self._on_detection_tick,
        }

    def run(self) -> RunResult:
        """Process events until ``sim_duration``.

        Returns:
            Metrics for both fusion modes, the trace and counters.
        """
        for t, detect in detection_windows(self.config):
            self.queue.push(t, EventKind.WINDOW_TICK)
            if detect:
                self.queue.push(t, EventKind.DETECTION_TICK)
        self.queue.push(self.config.sim_duration, EventKind.SIM_END)
        self._schedule_arrival(0.0)

        for event in self.queue:
            if event.kind is EventKind.SIM_END:
                break
            self._handlers[event.kind](event)

        if self.trace is not None:
            self.trace.append(end_record(self.config.sim_duration, len(self.trace)))

        logger.info(
            f"SIM: Seed {self.config.seed} finished: {self.stats['sessions']} "
            f"{p.plural_noun('session', self.stats['sessions'])}, "
            f"{self.stats['transmissions']} transmissions, {len(self.selfish)} selfish "
            f"{p.plural_noun('node', len(self.selfish))}"
        )
        return RunResult(
            config=self.config,
            topology=self.topology,
            selfish=self.selfish,
            metrics=self.harness.metrics,
            baseline_metrics=self.harness.baseline_metrics,
            trace=self.trace,
            stats=dict(self.stats),
        )

    def _record(self, record: dict[str, Any]) -> None:
        if self.trace is not None:
            self.trace.append(record)

    def _schedule_arrival(self, now: float) -> None:
        gap = self.traffic.exponential(1.0 / self.config.session_arrival_rate)
        self.queue.push(now + gap, EventKind.SESSION_ARRIVAL)

    def _on_session_arrival(self, event: Event) -> None:
        now = event.time
        self._schedule_arrival(now)

        node_count = self.topology.node_count
        duration = self.traffic.exponential(self.config.mean_session_duration)
        src = int(self.traffic.integers(node_count))
        dst = int(self.traffic.integers(node_count - 1))
        if dst >= src:
            dst += 1

        session = Session(len(self.sessions) + 1, src, dst, quantize(now + duration))
        self.sessions[session.id] = session
        self.stats["sessions"] += 1
        self._record(session_record(now, session.id, src, dst, session.end))
        logger.trace(f"SIM: Session {session.id} {src}->{dst} until {session.end:g}")

        route = self.nodes[src].valid_route(dst, now)
        if route is None:
            self._discover(session, now)
        else:
            self._schedule_refresh(session, route)

    def _discover(self, session: Session, now: float) -> None:
        packet = self.nodes[session.src].originate_rreq(session.dst, now)
        session.awaiting = packet.bcast_id
        self.stats["discoveries"] += 1
        self._transmit(packet, now)
        self.queue.push(
            now + self.config.rrep_timeout,
            EventKind.TIMER_EXPIRY,
            Timer(TimerKind.DISCOVERY_TIMEOUT, session.id, packet.bcast_id),
        )

    def _schedule_refresh(self, session: Session, route: RouteEntry) -> None:
        self.queue.push(
            route.expires_at, EventKind.TIMER_EXPIRY, Timer(TimerKind.ROUTE_REFRESH, session.id)
        )

    def _on_timer(self, event: Event) -> None:
        timer: Timer = event.payload
        session = self.sessions[timer.session]
        now = event.time

        if timer.kind is TimerKind.DISCOVERY_TIMEOUT:
            if session.awaiting != timer.bcast_id:
                return
            session.awaiting = None
        elif session.awaiting is not None:
            return

        if not session.active(now):
            return

        route = self.nodes[session.src].valid_route(session.dst, now)
        if route is None:
            self._discover(session, now)
        else:
            self._schedule_refresh(session, route)

    def _route_found(self, node: NodeId, route: RouteEntry, now: float) -> None:
        for session in self.sessions.values():
            if (
                session.src == node
                and session.dst == route.dest
                and session.awaiting is not None
                and session.active(now)
            ):
                session.awaiting = None
                self._schedule_refresh(session, route)

    def _transmit(self, packet: Packet, now: float) -> None:
        """Put ``packet`` on the air: deliver it, let monitors overhear it and trace it."""
        self.stats["transmissions"] += 1
        loss = self.config.channel_loss_prob
        rx = [
            n
            for n in sorted(neighbors(self.topology, packet.sender))
            if loss == 0 or self.channel.random() >= loss
        ]
        self._record(tx_record(now, packet, rx))
        self.harness.observe(packet, now, rx)

        targets = rx if isinstance(packet, RreqPacket) else [n for n in rx if n == packet.receiver]
        jitter = self.config.latency_jitter
        for node in targets:
            latency = self.config.per_hop_latency + self.channel.uniform(-jitter, jitter)
            self.queue.push(now + latency, EventKind.DELIVERY, (node, packet))

    def _on_transmission(self, event: Event) -> None:
        node, packet = event.payload
        if isinstance(packet, RreqPacket):
            packet = self.nodes[node].prepare_broadcast(packet)
        self._transmit(packet, event.time)

    def _on_delivery(self, event: Event) -> None:
        node, packet = event.payload
        state = self.nodes[node]
        now = event.time

        try:
            if isinstance(packet, RreqPacket):
                action = state.handle_rreq(packet, now, self.behavior)
            else:
                action = state.handle_rrep(packet, now, self.behavior)
        except NoReversePath as e:
            logger.warning(f"AODV: {e}")
            self._drop(node, packet, "no_reverse_path", now)
            return

        match action:
            case Rebroadcast(packet=out):
                delay = self.channel.uniform(0.0, self.config.broadcast_jitter)
                self.queue.push(now + delay, EventKind.TRANSMISSION, (node, out))
            case SendRrep(packet=out) | ForwardRrep(packet=out):
                self.queue.push(now, EventKind.TRANSMISSION, (node, out))
            case Consume(route=route):
                self._route_found(node, route, now)
            case Drop(reason=reason):
                self._drop(node, packet, reason, now)
            case Ignore():
                pass

    def _drop(self, node: NodeId, packet: Packet, reason: str, now: float) -> None:
        self.stats["drops"] += 1
        self._record(drop_record(now, node, packet, reason))
        logger.trace(f"AODV: {node} drops {packet.type.value} {packet.flood_key} ({reason})")

    def _on_window_tick(self, event: Event) -> None:
        self.harness.window_tick(event.time)

    def _on_detection_tick(self, event: Event) -> None:
        self.harness.detection_tick(event.time)


def run(config: ScenarioConfig, *, collect_trace: bool = True) -> RunResult:
    """Simulate one scenario.

    Args:
        config: The scenario.
        collect_trace: Keep the JSONL trace records in the result.

    Returns:
        Per-tick metrics for the configured fusion mode and the other one, plus the trace.

    Raises:
        ConnectivityUnreachable: If no connected layout can be placed.
    """
    logger.info(
        f"SIM: Seed {config.seed}, {config.node_count} nodes, {config.strategy.value} "
        f"p={config.drop_prob:g}, cross-check {'on' if config.crosscheck_enabled else 'off'}"
    )
    return Simulation(config, collect_trace=collect_trace).run()
