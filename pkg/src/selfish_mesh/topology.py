"""Static mesh topology: node placement and unit-disk adjacency."""

from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx
import numpy as np
from loguru import logger

from selfish_mesh.config import ScenarioConfig
from selfish_mesh.utils.errors import ConfigInvalid, ConnectivityUnreachable, UnknownNode

NodeId = int

MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class Topology:
    """Fixed node positions and the symmetric range-disk adjacency derived from them."""

    positions: tuple[tuple[float, float], ...]
    radio_range: float
    adjacency: tuple[frozenset[NodeId], ...] = field(repr=False)

    @property
    def node_count(self) -> int:
        """Number of nodes."""
        return len(self.positions)

    @cached_property
    def graph(self) -> nx.Graph:
        """The adjacency as a networkx graph."""
        graph = nx.Graph()
        graph.add_nodes_from(range(self.node_count))
        graph.add_edges_from((a, b) for a, nbrs in enumerate(self.adjacency) for b in nbrs if a < b)
        return graph

    def adjacent(self, a: NodeId, b: NodeId) -> bool:
        """Whether ``a`` and ``b`` are within radio range of each other."""
        return b in self.adjacency[a]

    def is_connected(self) -> bool:
        """Whether every node can reach every other node."""
        return nx.is_connected(self.graph)

    @classmethod
    def from_positions(
        cls,
        positions: Sequence[Sequence[float]],
        radio_range: float,
        *,
        require_connected: bool = True,
    ) -> "Topology":
        """Derive adjacency from explicit positions.

        Args:
            positions: One ``(x, y)`` pair in meters per node.
            radio_range: Maximum distance, inclusive, at which two nodes hear each other.
            require_connected: Raise when the resulting graph is not connected.

        Returns:
            The topology.

        Raises:
            ConnectivityUnreachable: If ``require_connected`` and the graph is disconnected.
        """
        coords = np.asarray(positions, dtype=float).reshape(-1, 2)
        diff = coords[:, None, :] - coords[None, :, :]
        within = np.hypot(diff[..., 0], diff[..., 1]) <= radio_range
        np.fill_diagonal(within, val=False)

        topology = cls(
            positions=tuple((float(x), float(y)) for x, y in coords),
            radio_range=float(radio_range),
            adjacency=tuple(frozenset(np.flatnonzero(row).tolist()) for row in within),
        )
        if require_connected and not topology.is_connected():
            msg = f"{topology.node_count} nodes at range {radio_range} m do not form a connected graph"
            raise ConnectivityUnreachable(msg)

        return topology


def build_topology(config: ScenarioConfig, rng: np.random.Generator) -> Topology:
    """Place nodes uniformly at random until the range-disk graph is connected.

    Whole layouts are resampled rather than individual nodes nudged, so the accepted layout is
    a draw from the uniform placement law conditioned on connectivity.

    Args:
        config: Supplies area, node count and radio range.
        rng: The placement substream.

    Returns:
        A connected topology.

    Raises:
        ConfigInvalid: If fewer than four nodes or a non-positive range is requested.
        ConnectivityUnreachable: After `MAX_PLACEMENT_ATTEMPTS` disconnected layouts.
    """
    if config.node_count < 4 or config.radio_range <= 0:  # noqa: PLR2004
        msg = "build_topology needs at least 4 nodes and a positive radio range"
        raise ConfigInvalid(msg)

    width, height = config.area
    for attempt in range(1, MAX_PLACEMENT_ATTEMPTS + 1):
        xy = rng.uniform((0.0, 0.0), (width, height), size=(config.node_count, 2))
        topology = Topology.from_positions(xy, config.radio_range, require_connected=False)
        if topology.is_connected():
            logger.debug(f"TOPOLOGY: Connected layout found on attempt {attempt}")
            return topology

    msg = (
        f"No connected layout of {config.node_count} nodes in {width:g}x{height:g} m at range "
        f"{config.radio_range:g} m after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )
    raise ConnectivityUnreachable(msg)


def neighbors(topology: Topology, node: NodeId) -> frozenset[NodeId]:
    """Return the nodes within radio range of ``node``, never ``node`` itself.

    Raises:
        UnknownNode: If ``node`` is not a valid index.
    """
    if not 0 <= node < topology.node_count:
        msg = f"Node {node} is not in a {topology.node_count}-node topology"
        raise UnknownNode(msg)

    return topology.adjacency[node]
