"""Shared utilities for selfish_mesh."""

from .errors import (
    ConfigInvalid,
    ConnectivityUnreachable,
    DomainError,
    FsmConsistencyError,
    InsufficientData,
    MalformedPacket,
    NoMonitors,
    NoReversePath,
    SelfishMeshError,
    TraceCorrupt,
    TraceVersionMismatch,
    UnknownNeighbor,
    UnknownNode,
)
from .helpers import format_time, get_config_value, load_config_values, quantize, substream
from .logging import InterceptHandler, configure_logging

__all__ = [
    "ConfigInvalid",
    "ConnectivityUnreachable",
    "DomainError",
    "FsmConsistencyError",
    "InsufficientData",
    "InterceptHandler",
    "MalformedPacket",
    "NoMonitors",
    "NoReversePath",
    "SelfishMeshError",
    "TraceCorrupt",
    "TraceVersionMismatch",
    "UnknownNeighbor",
    "UnknownNode",
    "configure_logging",
    "format_time",
    "get_config_value",
    "load_config_values",
    "quantize",
    "substream",
]
