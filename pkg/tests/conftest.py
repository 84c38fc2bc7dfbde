# type: ignore
"""Shared fixtures for the selfish-mesh tests."""

import pytest

from selfish_mesh.aodv import RrepPacket, RreqPacket
from selfish_mesh.config import ScenarioConfig
from selfish_mesh.topology import Topology

# Node ids of the six-node example neighborhood: N monitors X, Y and Z, none of which hear each
# other. S only hears X and D only hears Z.
S, X, N, Y, Z, D = range(6)


@pytest.fixture()
def fig_topology() -> Topology:
    """Six nodes around monitor N with three mutually out-of-range neighbors."""
    return Topology.from_positions(
        [(0, 0), (200, 0), (400, 0), (400, 200), (600, 0), (800, 0)],
        radio_range=250,
        require_connected=False,
    )


@pytest.fixture()
def fig_events() -> list[tuple[float, RreqPacket | RrepPacket]]:
    """The transmissions N overhears while S discovers a route to D."""
    flood = {"src_id": S, "dest_id": D, "src_seq_num": 1, "dest_seq_num": 0, "bcast_id": 1}
    reply = {"src_id": S, "dest_id": D, "dest_seq_num": 2, "bcast_id": 1}
    return [
        (0.010, RreqPacket(**flood, ttl=34, sender=X, next_to_source=X)),
        (0.020, RreqPacket(**flood, ttl=33, sender=Y, next_to_source=X)),
        (0.030, RreqPacket(**flood, ttl=33, sender=N, next_to_source=X)),
        (0.040, RreqPacket(**flood, ttl=32, sender=Z, next_to_source=X)),
        (0.050, RrepPacket(**reply, hop_count=1, sender=Z, receiver=N, next_to_source=X)),
        (
            0.060,
            RrepPacket(**reply, hop_count=2, sender=N, receiver=X, next_to_source=X, next_to_destination=S),
        ),
        (0.070, RrepPacket(**reply, hop_count=3, sender=X, receiver=S, next_to_source=X)),
    ]


@pytest.fixture()
def small_config() -> ScenarioConfig:
    """A scenario small enough to simulate in well under a second."""
    return ScenarioConfig(
        area=(500.0, 500.0),
        node_count=12,
        sim_duration=200.0,
        window_W=20.0,
        detection_D=80.0,
        session_arrival_rate=0.2,
        mean_session_duration=30.0,
        seed=7,
    )
