"""Promiscuous neighbor monitoring.

Every node watches each neighbor through one finite state machine per local message unit (LMU),
the part of an RREQ flood and its RREP that the monitor can observe. Recorded transitions are
counted into 8x8 transition matrices, one per neighbor and observation window.
"""

import heapq
from collections import deque
from collections.abc import Collection, Iterable
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from selfish_mesh.aodv import Packet, PacketType, RrepPacket
from selfish_mesh.topology import NodeId, Topology
from selfish_mesh.utils.errors import FsmConsistencyError, UnknownNeighbor


class FsmState(IntEnum):
    """States of a monitored node within one LMU."""

    INIT = 1
    UNEXP_RREP = 2
    RCVD_RREQ = 3
    FWD_RREQ = 4
    TIMEOUT_RREQ = 5
    RCVD_RREP = 6
    LMU_COMPLETE = 7
    TIMEOUT_RREP = 8


S = FsmState
M_STATES = len(FsmState)
FINAL_STATES = frozenset({S.TIMEOUT_RREQ, S.LMU_COMPLETE, S.TIMEOUT_RREP})

TRANSITIONS: frozenset[tuple[FsmState, FsmState]] = frozenset(
    {
        (S.INIT, S.RCVD_RREQ),
        (S.INIT, S.FWD_RREQ),
        (S.INIT, S.UNEXP_RREP),
        (S.RCVD_RREQ, S.RCVD_RREQ),
        (S.RCVD_RREQ, S.FWD_RREQ),
        (S.RCVD_RREQ, S.TIMEOUT_RREQ),
        (S.RCVD_RREQ, S.RCVD_RREP),
        (S.RCVD_RREQ, S.LMU_COMPLETE),
        (S.FWD_RREQ, S.FWD_RREQ),
        (S.FWD_RREQ, S.TIMEOUT_RREQ),
        (S.FWD_RREQ, S.RCVD_RREP),
        (S.FWD_RREQ, S.LMU_COMPLETE),
        (S.RCVD_RREP, S.LMU_COMPLETE),
        (S.RCVD_RREP, S.TIMEOUT_RREP),
        (S.UNEXP_RREP, S.LMU_COMPLETE),
        (S.UNEXP_RREP, S.TIMEOUT_RREP),
    }
)

# Reactions keyed by the state the monitored node is in when the event is observed.
_ON_RREQ_DELIVERED = {S.INIT: S.RCVD_RREQ, S.RCVD_RREQ: S.RCVD_RREQ, S.FWD_RREQ: S.FWD_RREQ}
_ON_RREQ_BROADCAST = {S.INIT: S.FWD_RREQ, S.RCVD_RREQ: S.FWD_RREQ, S.FWD_RREQ: S.FWD_RREQ}
_ON_RREP_DELIVERED = {S.INIT: S.UNEXP_RREP, S.RCVD_RREQ: S.RCVD_RREP, S.FWD_RREQ: S.RCVD_RREP}
_ON_RREP_SENT = {
    S.UNEXP_RREP: S.LMU_COMPLETE,
    S.RCVD_RREQ: S.LMU_COMPLETE,
    S.FWD_RREQ: S.LMU_COMPLETE,
    S.RCVD_RREP: S.LMU_COMPLETE,
}
_ON_TIMEOUT = {
    S.RCVD_RREQ: S.TIMEOUT_RREQ,
    S.FWD_RREQ: S.TIMEOUT_RREQ,
    S.RCVD_RREP: S.TIMEOUT_RREP,
    S.UNEXP_RREP: S.TIMEOUT_RREP,
}
_RREQ_TIMED = frozenset({S.RCVD_RREQ, S.FWD_RREQ})
_RREP_TIMED = frozenset({S.RCVD_RREP, S.UNEXP_RREP})


class LmuKey(NamedTuple):
    """Identity of a local message unit: the flood's source, destination and bcast_id."""

    source: NodeId
    dest: NodeId
    bcast_id: int

    @classmethod
    def of(cls, packet: Packet) -> "LmuKey":
        """The LMU a packet belongs to."""
        return cls(packet.src_id, packet.dest_id, packet.bcast_id)


class Transition(NamedTuple):
    """One recorded FSM transition of a monitored node."""

    monitored: NodeId
    before: FsmState
    after: FsmState


@dataclass(frozen=True)
class ClockTick:
    """A pure passage of time; lets pending deadlines fire."""


@dataclass(slots=True)
class LmuFsm:
    """State machine of one monitored node in one LMU."""

    monitored: NodeId
    lmu: LmuKey
    state: FsmState = S.INIT
    rreq_deadline: float | None = None
    rrep_deadline: float | None = None

    @property
    def deadline(self) -> float | None:
        """The deadline that drives the next timeout, given the current state."""
        if self.state in _RREQ_TIMED:
            return self.rreq_deadline
        if self.state in _RREP_TIMED:
            return self.rrep_deadline
        return None


class TransitionMatrix:
    """Counts ``f_ij`` of observed transitions ``i -> j`` for one neighbor.

    Indexing is by FSM state number, so ``matrix[3, 4]`` is the number of ``3 -> 4`` transitions.
    """

    __slots__ = ("counts",)

    def __init__(self, counts: npt.ArrayLike | None = None) -> None:
        if counts is None:
            self.counts = np.zeros((M_STATES, M_STATES), dtype=np.int64)
        else:
            self.counts = np.array(counts, dtype=np.int64).reshape(M_STATES, M_STATES)

    def record(self, before: int, after: int, times: int = 1) -> None:
        """Count ``times`` transitions ``before -> after``."""
        self.counts[before - 1, after - 1] += times

    def __getitem__(self, key: tuple[int, int]) -> int:
        """Count of transitions between two state numbers."""
        i, j = key
        return int(self.counts[i - 1, j - 1])

    def row(self, state: int) -> npt.NDArray[np.int64]:
        """Outgoing counts of ``state`` (a view)."""
        return self.counts[state - 1]

    @property
    def row_totals(self) -> npt.NDArray[np.int64]:
        """``F_i``, the number of transitions out of each state."""
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        """Number of transitions counted."""
        return int(self.counts.sum())

    def copy(self) -> "TransitionMatrix":
        """An independent copy."""
        return TransitionMatrix(self.counts.copy())

    def __add__(self, other: "TransitionMatrix") -> "TransitionMatrix":
        """Element-wise sum."""
        return TransitionMatrix(self.counts + other.counts)

    def __eq__(self, other: object) -> bool:
        """Equal when every count matches."""
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return bool(np.array_equal(self.counts, other.counts))

    __hash__ = None  # type: ignore [assignment]

    def __repr__(self) -> str:
        """Sparse rendering of the non-zero cells."""
        cells = ", ".join(
            f"{i + 1}->{j + 1}: {self.counts[i, j]}" for i, j in zip(*np.nonzero(self.counts))
        )
        return f"TransitionMatrix({{{cells}}})"

    def to_list(self) -> list[list[int]]:
        """Nested lists, for JSON."""
        return self.counts.tolist()

    @classmethod
    def total_of(cls, matrices: Iterable["TransitionMatrix"]) -> "TransitionMatrix":
        """Element-wise sum of any number of matrices."""
        total = cls()
        for matrix in matrices:
            total.counts += matrix.counts
        return total


class ObservationBuffer:
    """Per-neighbor ring of the last ``d`` closed window matrices plus the open window."""

    def __init__(self, neighbors: Iterable[NodeId], windows: int) -> None:
        self.windows = windows
        self.window_index = 0
        self._current = {n: TransitionMatrix() for n in sorted(neighbors)}
        self._closed: dict[NodeId, deque[TransitionMatrix]] = {
            n: deque(maxlen=windows) for n in self._current
        }

    @property
    def neighbors(self) -> tuple[NodeId, ...]:
        """Monitored neighbors in ascending order."""
        return tuple(self._current)

    @property
    def ready(self) -> bool:
        """Whether ``d`` full windows have been closed."""
        return self.window_index >= self.windows

    def current(self, neighbor: NodeId) -> TransitionMatrix:
        """The open window's matrix for ``neighbor``."""
        try:
            return self._current[neighbor]
        except KeyError:
            msg = f"{neighbor} is not monitored by this buffer"
            raise UnknownNeighbor(msg) from None

    def rollover(self) -> bool:
        """Close the open window, evicting the oldest closed one.

        Returns:
            Whether aggregates now span ``d`` full windows.
        """
        for neighbor, matrix in self._current.items():
            self._closed[neighbor].append(matrix)
            self._current[neighbor] = TransitionMatrix()
        self.window_index += 1
        return self.ready

    def aggregate(self, neighbor: NodeId) -> TransitionMatrix:
        """Element-wise sum of the retained closed windows for ``neighbor``.

        Raises:
            UnknownNeighbor: If ``neighbor`` is not monitored.
        """
        if neighbor not in self._closed:
            msg = f"{neighbor} is not monitored by this buffer"
            raise UnknownNeighbor(msg)
        return TransitionMatrix.total_of(self._closed[neighbor])

    def windows_of(self, neighbor: NodeId) -> list[TransitionMatrix]:
        """The retained closed windows for ``neighbor``, oldest first."""
        return list(self._closed[neighbor])


class Neighborhood:
    """What a monitor knows about its one- and two-hop surroundings.

    Nodes are stationary and links symmetric, so a monitor can tell which of its neighbors are
    within range of any transmitter it hears.
    """

    def __init__(self, monitor: NodeId, topology: Topology) -> None:
        self.monitor = monitor
        self.neighbors = topology.adjacency[monitor]
        self._shared: dict[NodeId, tuple[NodeId, ...]] = {
            monitor: tuple(sorted(self.neighbors)),
        }
        for n in self.neighbors:
            self._shared[n] = tuple(sorted(self.neighbors & topology.adjacency[n]))

    def hears(self, transmitter: NodeId) -> bool:
        """Whether ``transmitter`` is the monitor itself or one of its neighbors."""
        return transmitter in self._shared

    def recipients(
        self, packet: Packet, delivered: Collection[NodeId] | None = None
    ) -> tuple[NodeId, ...]:
        """Neighbors that ``packet``'s transmission is delivered to, excluding the monitor.

        Args:
            packet: A transmission by the monitor or one of its neighbors.
            delivered: Nodes the channel actually delivered to. None means every node in range.
        """
        in_range = self._shared.get(packet.sender, ())
        if packet.type is PacketType.RREQ:
            candidates = in_range
        else:
            assert isinstance(packet, RrepPacket)  # noqa: S101
            candidates = (packet.receiver,) if packet.receiver in in_range else ()

        if delivered is None:
            return candidates
        return tuple(n for n in candidates if n in delivered)


class NeighborhoodMonitor:
    """FSM tracking and windowed transition counting at one monitor node."""

    def __init__(
        self,
        neighborhood: Neighborhood,
        *,
        rreq_timeout: float,
        rrep_timeout: float,
        windows: int,
    ) -> None:
        self.neighborhood = neighborhood
        self.rreq_timeout = rreq_timeout
        self.rrep_timeout = rrep_timeout
        self.buffer = ObservationBuffer(neighborhood.neighbors, windows)
        self._active: dict[tuple[NodeId, LmuKey], LmuFsm] = {}
        self._finished: set[tuple[NodeId, LmuKey]] = set()
        self._finished_before: set[tuple[NodeId, LmuKey]] = set()
        self._deadlines: list[tuple[float, int, NodeId, LmuKey]] = []
        self._pushes = 0

    @property
    def monitor(self) -> NodeId:
        """Id of the monitoring node."""
        return self.neighborhood.monitor

    def observe_event(self, event: Packet | ClockTick, now: float) -> list[Transition]:
        """Apply one observed transmission, or a clock tick, to the neighbors' FSMs.

        Deadlines that passed before ``now`` fire first, in deadline order.

        Args:
            event: A transmission the monitor heard (its own included), or a `ClockTick`.
            now: Observation time.

        Returns:
            The transitions recorded, in order.
        """
        recorded = self._expire(now)
        if isinstance(event, ClockTick) or not self.neighborhood.hears(event.sender):
            return recorded

        lmu = LmuKey.of(event)
        transmitter = event.sender
        if event.type is PacketType.RREQ:
            if transmitter != self.monitor:
                self._apply(transmitter, lmu, _ON_RREQ_BROADCAST, now, recorded)
            for recipient in self.neighborhood.recipients(event):
                self._apply(recipient, lmu, _ON_RREQ_DELIVERED, now, recorded)
        else:
            if transmitter != self.monitor:
                self._apply(transmitter, lmu, _ON_RREP_SENT, now, recorded)
            for recipient in self.neighborhood.recipients(event):
                if recipient != lmu.source:
                    self._apply(recipient, lmu, _ON_RREP_DELIVERED, now, recorded)

        return recorded

    def window_rollover(self, now: float) -> bool:
        """Fire due deadlines, then close the current observation window.

        Returns:
            Whether aggregated matrices now cover a full detection window.
        """
        self._expire(now)
        self._finished_before = self._finished
        self._finished = set()
        return self.buffer.rollover()

    def aggregate(self, neighbor: NodeId) -> TransitionMatrix:
        """Summed matrix of ``neighbor`` over the detection window."""
        return self.buffer.aggregate(neighbor)

    def aggregates(self) -> dict[NodeId, TransitionMatrix]:
        """Summed matrices of every neighbor, keyed in ascending node order."""
        return {n: self.buffer.aggregate(n) for n in self.buffer.neighbors}

    def state_of(self, neighbor: NodeId, lmu: LmuKey) -> FsmState:
        """Current FSM state of ``neighbor`` in ``lmu`` (INIT when never observed)."""
        fsm = self._active.get((neighbor, lmu))
        return fsm.state if fsm else S.INIT

    def _apply(
        self,
        monitored: NodeId,
        lmu: LmuKey,
        reactions: dict[FsmState, FsmState],
        now: float,
        recorded: list[Transition],
    ) -> None:
        key = (monitored, lmu)
        fsm = self._active.get(key)
        if fsm is None:
            if key in self._finished or key in self._finished_before:
                return
            fsm = LmuFsm(monitored, lmu)
            self._active[key] = fsm

        # A reply sent with no RREQ seen is an unexpected RREP that completes at once.
        if fsm.state is S.INIT and reactions is _ON_RREP_SENT:
            self._move(fsm, S.UNEXP_RREP, now, recorded)

        target = reactions.get(fsm.state)
        if target is not None:
            self._move(fsm, target, now, recorded)

    def _move(self, fsm: LmuFsm, target: FsmState, now: float, recorded: list[Transition]) -> None:
        before = fsm.state
        if (before, target) not in TRANSITIONS:
            msg = f"{before.value}->{target.value} is not an FSM edge"
            raise FsmConsistencyError(msg)

        self.buffer.current(fsm.monitored).record(before, target)
        recorded.append(Transition(fsm.monitored, before, target))
        fsm.state = target

        key = (fsm.monitored, fsm.lmu)
        if target in FINAL_STATES:
            del self._active[key]
            self._finished.add(key)
            return

        if target in _RREQ_TIMED:
            fsm.rreq_deadline = now + self.rreq_timeout
            self._push_deadline(fsm.rreq_deadline, key)
        elif target in _RREP_TIMED:
            fsm.rreq_deadline = None
            fsm.rrep_deadline = now + self.rrep_timeout
            self._push_deadline(fsm.rrep_deadline, key)

    def _push_deadline(self, deadline: float, key: tuple[NodeId, LmuKey]) -> None:
        self._pushes += 1
        heapq.heappush(self._deadlines, (deadline, self._pushes, key[0], key[1]))

    def _expire(self, now: float) -> list[Transition]:
        recorded: list[Transition] = []
        while self._deadlines and self._deadlines[0][0] <= now:
            deadline, _, monitored, lmu = heapq.heappop(self._deadlines)
            fsm = self._active.get((monitored, lmu))
            # Entries left behind by a re-armed or finished FSM are stale.
            if fsm is None or fsm.deadline != deadline:
                continue
            self._move(fsm, _ON_TIMEOUT[fsm.state], deadline, recorded)
        return recorded
