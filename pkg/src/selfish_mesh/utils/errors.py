"""Exceptions raised by selfish_mesh."""


class SelfishMeshError(Exception):
    """Base class for every error raised by this package."""


class ConfigInvalid(SelfishMeshError):  # noqa: N818
    """A scenario configuration value is missing, malformed or out of range."""


class ConnectivityUnreachable(SelfishMeshError):  # noqa: N818
    """No connected placement was found for the requested area and radio range."""


class UnknownNode(SelfishMeshError, KeyError):  # noqa: N818
    """A node index outside ``[0, node_count)`` was requested."""


class UnknownNeighbor(SelfishMeshError, KeyError):  # noqa: N818
    """A monitor was asked about a node it does not monitor."""


class MalformedPacket(SelfishMeshError):  # noqa: N818
    """A control packet violates a header invariant (e.g. negative ttl)."""


class NoReversePath(SelfishMeshError):  # noqa: N818
    """An RREP reached a node whose reverse-path entry has expired or never existed."""


class InsufficientData(SelfishMeshError):  # noqa: N818
    """A statistical test was given too few observations to be computed."""


class NoMonitors(SelfishMeshError):  # noqa: N818
    """A network-level verdict was requested for a node no monitor reported on."""


class TraceVersionMismatch(SelfishMeshError):  # noqa: N818
    """A trace was written by an incompatible trace format version."""


class TraceCorrupt(SelfishMeshError):  # noqa: N818
    """A trace file is truncated or contains records that cannot be parsed."""


class FsmConsistencyError(SelfishMeshError):
    """A monitor tried to record a transition that is not an edge of the FSM."""


class DomainError(SelfishMeshError, ValueError):
    """A numerical routine was called outside its mathematical domain."""
