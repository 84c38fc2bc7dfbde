"""JSONL event trace of a run and replay of the monitoring pipeline from it.

A trace is one JSON object per line. It opens with a ``header`` record (format version,
positions, radio range, planted selfish nodes and the config snapshot), continues with
``session``, ``tx`` and ``drop`` records in simulation order and closes with an ``end``
record. Keys are written in a fixed order and times as fixed six-decimal strings, so equal runs
produce byte-identical files.
"""

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from loguru import logger

from selfish_mesh.aodv import Packet, PacketType, RrepPacket, RreqPacket
from selfish_mesh.config import ScenarioConfig
from selfish_mesh.harness import DetectionHarness, MetricsRecord, detection_windows
from selfish_mesh.topology import NodeId, Topology
from selfish_mesh.utils.errors import ConfigInvalid, TraceCorrupt, TraceVersionMismatch
from selfish_mesh.utils.helpers import format_time

TRACE_VERSION = 1
BROADCAST = "bcast"


def header_record(
    config: ScenarioConfig, topology: Topology, selfish: Iterable[NodeId]
) -> dict[str, Any]:
    """The record that opens every trace."""
    return {
        "kind": "header",
        "version": TRACE_VERSION,
        "positions": [list(xy) for xy in topology.positions],
        "radio_range": topology.radio_range,
        "selfish": sorted(selfish),
        "config": config.to_dict(),
    }


def session_record(t: float, session: int, src: NodeId, dst: NodeId, end: float) -> dict[str, Any]:
    """A traffic session starting at ``t``."""
    return {
        "t": format_time(t),
        "kind": "session",
        "session": session,
        "src": src,
        "dst": dst,
        "end": format_time(end),
    }


def tx_record(t: float, packet: Packet, rx: Sequence[NodeId]) -> dict[str, Any]:
    """A transmission and the nodes the channel delivered it to."""
    record: dict[str, Any] = {
        "t": format_time(t),
        "kind": "tx",
        "type": packet.type.value,
        "src": packet.sender,
        "dst": packet.receiver if isinstance(packet, RrepPacket) else BROADCAST,
        "src_id": packet.src_id,
        "dest_id": packet.dest_id,
        "bcast_id": packet.bcast_id,
        "dest_seq_num": packet.dest_seq_num,
    }
    if isinstance(packet, RreqPacket):
        record |= {"src_seq_num": packet.src_seq_num, "ttl": packet.ttl}
    else:
        record |= {"hop_count": packet.hop_count}
    record |= {
        "next_to_source": packet.next_to_source,
        "duplicate_flag": packet.duplicate_flag,
    }
    if isinstance(packet, RrepPacket):
        record["next_to_destination"] = packet.next_to_destination
    record["rx"] = list(rx)
    return record


def drop_record(t: float, node: NodeId, packet: Packet, reason: str) -> dict[str, Any]:
    """A packet discarded by ``node``."""
    return {
        "t": format_time(t),
        "kind": "drop",
        "node": node,
        "type": packet.type.value,
        "src_id": packet.src_id,
        "dest_id": packet.dest_id,
        "bcast_id": packet.bcast_id,
        "reason": reason,
    }


def end_record(t: float, records: int) -> dict[str, Any]:
    """The closing record; ``records`` counts every record before it, header included."""
    return {"t": format_time(t), "kind": "end", "records": records}


def packet_from_record(record: dict[str, Any]) -> Packet:
    """Rebuild the packet of a ``tx`` record.

    Raises:
        TraceCorrupt: If fields are missing or malformed.
    """
    try:
        if record["type"] == PacketType.RREQ.value:
            return RreqPacket(
                src_id=int(record["src_id"]),
                dest_id=int(record["dest_id"]),
                src_seq_num=int(record["src_seq_num"]),
                dest_seq_num=int(record["dest_seq_num"]),
                bcast_id=int(record["bcast_id"]),
                ttl=int(record["ttl"]),
                sender=int(record["src"]),
                next_to_source=int(record["next_to_source"]),
                duplicate_flag=bool(record["duplicate_flag"]),
            )
        if record["type"] == PacketType.RREP.value:
            return RrepPacket(
                src_id=int(record["src_id"]),
                dest_id=int(record["dest_id"]),
                dest_seq_num=int(record["dest_seq_num"]),
                hop_count=int(record["hop_count"]),
                sender=int(record["src"]),
                receiver=int(record["dst"]),
                bcast_id=int(record["bcast_id"]),
                next_to_source=int(record["next_to_source"]),
                duplicate_flag=bool(record["duplicate_flag"]),
                next_to_destination=int(record["next_to_destination"]),
            )
    except (KeyError, TypeError, ValueError) as e:
        msg = f"Malformed tx record: {record}"
        raise TraceCorrupt(msg) from e

    msg = f"Unknown packet type in tx record: {record.get('type')}"
    raise TraceCorrupt(msg)


def dumps(record: dict[str, Any]) -> str:
    """One trace line, without the newline."""
    return json.dumps(record, separators=(",", ":"))


def write_trace(path: Path, records: Iterable[dict[str, Any]]) -> None:
    """Write records as JSONL."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(dumps(record) + "\n")
    logger.info(f"TRACE: Wrote {path}")


def read_trace(path: Path) -> list[dict[str, Any]]:
    """Load and validate a JSONL trace.

    Args:
        path: The trace file.

    Returns:
        The records, header first.

    Raises:
        TraceCorrupt: If the file is unreadable, a line is not JSON, or the header or closing
            record is missing.
        TraceVersionMismatch: If the header's format version differs from `TRACE_VERSION`.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        msg = f"Cannot read trace {path}: {e}"
        raise TraceCorrupt(msg) from e

    records: list[dict[str, Any]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            msg = f"{path}:{number} is not valid JSON"
            raise TraceCorrupt(msg) from e

    validate_trace(records)
    return records


def validate_trace(records: Sequence[dict[str, Any]]) -> None:
    """Check the header, version and closing record of a loaded trace.

    Raises:
        TraceCorrupt: On a missing header or a missing or inconsistent end record.
        TraceVersionMismatch: On a different format version.
    """
    if not records or records[0].get("kind") != "header":
        msg = "Trace does not start with a header record"
        raise TraceCorrupt(msg)

    version = records[0].get("version")
    if version != TRACE_VERSION:
        msg = f"Trace format version {version} is not supported (expected {TRACE_VERSION})"
        raise TraceVersionMismatch(msg)

    last = records[-1]
    if last.get("kind") != "end" or last.get("records") != len(records) - 1:
        msg = "Trace is truncated: closing record missing or record count mismatch"
        raise TraceCorrupt(msg)


@dataclass
class ReplayResult:
    """Metrics recomputed from a trace."""

    metrics: list[MetricsRecord]
    baseline_metrics: list[MetricsRecord]


def replay(records: Sequence[dict[str, Any]], config: ScenarioConfig | None = None) -> ReplayResult:
    """Drive the monitoring and detection pipeline from recorded transmissions only.

    Args:
        records: A validated trace, header first.
        config: Scenario parameters; defaults to the snapshot in the header.

    Returns:
        The metrics the run produced, reproduced exactly for an unmodified trace.

    Raises:
        TraceCorrupt: On malformed records.
        TraceVersionMismatch: On a different format version.
    """
    validate_trace(records)
    header = records[0]
    try:
        if config is None:
            config = ScenarioConfig.from_dict(header["config"])
        topology = Topology.from_positions(
            header["positions"], header["radio_range"], require_connected=False
        )
        selfish = [int(n) for n in header["selfish"]]
    except (KeyError, TypeError, ValueError, ConfigInvalid) as e:
        msg = f"Trace header is malformed: {e}"
        raise TraceCorrupt(msg) from e

    harness = DetectionHarness(topology, config, selfish)
    ticks = iter(detection_windows(config))
    pending = next(ticks, None)

    transmissions = 0
    for record in records[1:-1]:
        kind = record.get("kind")
        if kind in {"session", "drop"}:
            continue
        if kind != "tx":
            msg = f"Unknown record kind '{kind}'"
            raise TraceCorrupt(msg)

        try:
            t = float(record["t"])
            rx = [int(n) for n in record["rx"]]
        except (KeyError, TypeError, ValueError) as e:
            msg = f"Malformed tx record: {record}"
            raise TraceCorrupt(msg) from e

        while pending is not None and pending[0] <= t:
            harness.tick(pending[0], detect=pending[1])
            pending = next(ticks, None)

        harness.observe(packet_from_record(record), t, rx)
        transmissions += 1

    while pending is not None:
        harness.tick(pending[0], detect=pending[1])
        pending = next(ticks, None)

    logger.info(
        f"TRACE: Replayed {transmissions} transmissions into {len(harness.metrics)} detection ticks"
    )
    return ReplayResult(harness.metrics, harness.baseline_metrics)
