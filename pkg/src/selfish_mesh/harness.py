"""Network-wide monitoring, detection and metrics.

Every node runs a `MonitorNode`: FSM tracking of its neighbors plus the cross-check ledger. On
each detection tick every monitor classifies its neighbors, both fusion modes are evaluated,
and per-node verdicts are reduced to network metrics by majority over each node's monitors.
The harness only consumes transmissions and ticks, so a recorded trace drives it exactly as a
live simulation does.
"""

from collections.abc import Collection, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import inflect
from loguru import logger

from selfish_mesh.aodv import Packet
from selfish_mesh.config import ScenarioConfig
from selfish_mesh.crosscheck import Evidence, EvidenceLedger, FusionPolicy, fuse
from selfish_mesh.monitor import Neighborhood, NeighborhoodMonitor
from selfish_mesh.stats import ClassificationResult, DetectorParams, Verdict, detect_neighborhood
from selfish_mesh.topology import NodeId, Topology
from selfish_mesh.utils.errors import NoMonitors
from selfish_mesh.utils.helpers import quantize

p = inflect.engine()

CROSSCHECK = "crosscheck"
BASELINE = "baseline"


def node_verdict_majority(per_monitor: Sequence[Verdict]) -> Verdict:
    """Reduce the verdicts several monitors hold about one node.

    Unascertained votes abstain. Selfish wins only with strictly more votes than Cooperative.

    Args:
        per_monitor: One verdict per monitor of the node.

    Returns:
        The network-level verdict; Unascertained when every monitor abstains.

    Raises:
        NoMonitors: If ``per_monitor`` is empty.

    >>> node_verdict_majority([Verdict.SELFISH, Verdict.COOPERATIVE])
    <Verdict.COOPERATIVE: 'Cooperative'>
    """
    if not per_monitor:
        msg = "A node verdict needs at least one monitor"
        raise NoMonitors(msg)

    selfish = sum(v is Verdict.SELFISH for v in per_monitor)
    cooperative = sum(v is Verdict.COOPERATIVE for v in per_monitor)
    if selfish == 0 and cooperative == 0:
        return Verdict.UNASCERTAINED
    return Verdict.SELFISH if selfish > cooperative else Verdict.COOPERATIVE


def detection_windows(config: ScenarioConfig) -> list[tuple[float, bool]]:
    """Window tick times below ``sim_duration``, flagged when a detection tick follows.

    >>> [t for t, detect in detection_windows(ScenarioConfig()) if detect][:2]
    [400.0, 500.0]
    """
    ticks: list[tuple[float, bool]] = []
    k = 1
    while (t := quantize(k * config.window_W)) < config.sim_duration:
        ticks.append((t, k >= config.windows_per_detection))
        k += 1
    return ticks


@dataclass
class MonitorDetail:
    """What one monitor concluded at one detection tick."""

    monitor: NodeId
    stat: ClassificationResult
    evidence: dict[NodeId, Evidence]
    fused: dict[NodeId, Verdict]

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly rendering."""
        return {
            "monitor": self.monitor,
            **self.stat.to_dict(),
            "fused": {str(n): v.value for n, v in self.fused.items()},
            "evidence": {str(n): e.to_dict() for n, e in self.evidence.items()},
        }


@dataclass
class MetricsRecord:
    """Network metrics at one detection tick for one fusion mode."""

    window_end: float
    mode: str
    verdicts: dict[NodeId, Verdict]
    detection_rate: float | None
    false_positive_rate: float | None
    monitors: list[MonitorDetail] = field(default_factory=list, repr=False)

    def to_dict(self, *, detail: bool = True) -> dict[str, Any]:
        """JSON-friendly rendering with stable key order."""
        record: dict[str, Any] = {
            "window_end": self.window_end,
            "mode": self.mode,
            "detection_rate": self.detection_rate,
            "false_positive_rate": self.false_positive_rate,
            "verdicts": {str(n): v.value for n, v in self.verdicts.items()},
        }
        if detail:
            record["monitors"] = [m.to_dict() for m in self.monitors]
        return record


class MonitorNode:
    """One node's monitoring role: FSMs over its neighbors and their forwarding duties."""

    def __init__(self, node: NodeId, topology: Topology, config: ScenarioConfig) -> None:
        self.neighborhood = Neighborhood(node, topology)
        self.fsm = NeighborhoodMonitor(
            self.neighborhood,
            rreq_timeout=config.rreq_timeout,
            rrep_timeout=config.rrep_timeout,
            windows=config.windows_per_detection,
        )
        self.ledger = EvidenceLedger(
            node,
            self.neighborhood.neighbors,
            rreq_timeout=config.rreq_timeout,
            rrep_timeout=config.rrep_timeout,
            windows=config.windows_per_detection,
        )

    @property
    def node(self) -> NodeId:
        """Id of the monitoring node."""
        return self.neighborhood.monitor

    def observe(
        self, packet: Packet, now: float, delivered: Collection[NodeId] | None = None
    ) -> None:
        """Feed one overheard transmission to the FSMs and the ledger.

        Forwarding duties are only raised for neighbors in ``delivered``, or for every neighbor in
        range when it is None.
        """
        self.fsm.observe_event(packet, now)
        self.ledger.resolve_obligations(packet, now)
        if not self.neighborhood.hears(packet.sender):
            return
        for recipient in self.neighborhood.recipients(packet, delivered):
            self.ledger.register_obligation(packet, recipient, now)

    def rollover(self, now: float) -> bool:
        """Close the observation window; True once a full detection window is buffered."""
        self.ledger.rollover(now)
        return self.fsm.window_rollover(now)

    def detect(self, params: DetectorParams, policy: FusionPolicy) -> dict[str, MonitorDetail]:
        """Classify the neighbors and fuse both ways.

        Returns:
            Detail keyed by mode (`CROSSCHECK`, `BASELINE`).
        """
        report = detect_neighborhood(self.fsm.aggregates(), params)
        evidence = self.ledger.snapshot()
        return {
            mode: MonitorDetail(
                monitor=self.node,
                stat=report.result,
                evidence=evidence,
                fused=fuse(report.result, evidence, policy, enabled=mode == CROSSCHECK),
            )
            for mode in (CROSSCHECK, BASELINE)
        }


class DetectionHarness:
    """All monitors of a network plus ground truth, driven by transmissions and ticks.

    Args:
        topology: The static topology.
        config: Scenario parameters.
        selfish: The planted selfish nodes.
    """

    def __init__(
        self, topology: Topology, config: ScenarioConfig, selfish: Iterable[NodeId]
    ) -> None:
        self.topology = topology
        self.config = config
        self.selfish = frozenset(selfish)
        self.mode = CROSSCHECK if config.crosscheck_enabled else BASELINE
        self.params = DetectorParams(
            alpha=config.alpha, beta=config.beta, min_row_total=config.min_row_total
        )
        self.policy = FusionPolicy(
            hard_ratio=config.hard_ratio,
            min_obligations=config.min_obligations,
            confirm_min=config.confirm_min,
        )
        self.monitors = [MonitorNode(n, topology, config) for n in range(topology.node_count)]
        self.metrics: list[MetricsRecord] = []
        self.baseline_metrics: list[MetricsRecord] = []

    def observe(self, packet: Packet, now: float, hearers: Iterable[NodeId]) -> None:
        """Deliver a transmission to every monitor that heard it.

        Args:
            packet: The transmitted packet.
            now: Transmission time.
            hearers: The transmitter and the nodes the channel delivered to.
        """
        delivered = frozenset(hearers)
        for node in sorted({packet.sender, *delivered}):
            self.monitors[node].observe(packet, now, delivered)

    def window_tick(self, now: float) -> None:
        """Close the observation window at every monitor."""
        for monitor in self.monitors:
            monitor.rollover(now)
        logger.debug(f"MONITOR: Window closed at {now:g} s")

    def detection_tick(self, now: float) -> tuple[MetricsRecord, MetricsRecord]:
        """Run detection at every monitor and record metrics for both fusion modes.

        Returns:
            The record of the configured mode, then the record of the other mode.
        """
        details: dict[str, list[MonitorDetail]] = {CROSSCHECK: [], BASELINE: []}
        for monitor in self.monitors:
            if not monitor.fsm.buffer.neighbors:
                continue
            for mode, detail in monitor.detect(self.params, self.policy).items():
                details[mode].append(detail)

        records = {mode: self._metrics(now, mode, details[mode]) for mode in details}
        configured = records[self.mode]
        other = records[BASELINE if self.mode == CROSSCHECK else CROSSCHECK]
        self.metrics.append(configured)
        self.baseline_metrics.append(other)

        flagged = sum(v is Verdict.SELFISH for v in configured.verdicts.values())
        logger.debug(
            f"DETECT: t={now:g} {self.mode} flagged {flagged} {p.plural_noun('node', flagged)}, "
            f"detection {configured.detection_rate}, false positives {configured.false_positive_rate}"
        )
        return configured, other

    def tick(self, now: float, *, detect: bool) -> None:
        """A window tick, followed by a detection tick when ``detect`` is set."""
        self.window_tick(now)
        if detect:
            self.detection_tick(now)

    def _metrics(self, now: float, mode: str, details: list[MonitorDetail]) -> MetricsRecord:
        votes: dict[NodeId, list[Verdict]] = {n: [] for n in range(self.topology.node_count)}
        for detail in details:
            for node, verdict in detail.fused.items():
                votes[node].append(verdict)

        verdicts: dict[NodeId, Verdict] = {}
        for node, node_votes in votes.items():
            try:
                verdicts[node] = node_verdict_majority(node_votes)
            except NoMonitors:
                logger.debug(f"DETECT: Node {node} has no monitor")
                verdicts[node] = Verdict.UNASCERTAINED

        honest = [n for n in verdicts if n not in self.selfish]
        return MetricsRecord(
            window_end=now,
            mode=mode,
            verdicts=verdicts,
            detection_rate=_flagged_fraction(verdicts, sorted(self.selfish)),
            false_positive_rate=_flagged_fraction(verdicts, honest),
            monitors=details,
        )


def _flagged_fraction(verdicts: dict[NodeId, Verdict], nodes: Sequence[NodeId]) -> float | None:
    if not nodes:
        return None
    return sum(verdicts[n] is Verdict.SELFISH for n in nodes) / len(nodes)

