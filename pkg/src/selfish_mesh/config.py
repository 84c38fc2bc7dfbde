"""Scenario configuration.

Defaults follow the classic ns-2 mesh setup (900 m x 900 m, 50 nodes, 1600 s, W = 100 s,
D = 400 s, alpha = 0.1, beta = 0.4). Values can come from a dotenv-style file, environment
variables prefixed ``SELFISH_MESH_`` and CLI overrides, in increasing order of precedence.
"""

import dataclasses
import math
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Any

from loguru import logger

from selfish_mesh.utils.errors import ConfigInvalid
from selfish_mesh.utils.helpers import get_config_value, load_config_values


class Strategy(StrEnum):
    """Selfish dropping strategies."""

    DROP_REQ = "DropReq"
    DROP_REP = "DropRep"

    @classmethod
    def parse(cls, value: str) -> "Strategy":
        """Accept ``DropReq``, ``drop_req``, ``DROP_REQ`` and friends.

        >>> Strategy.parse("drop_rep")
        <Strategy.DROP_REP: 'DropRep'>
        """
        key = value.replace("_", "").replace("-", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member

        msg = f"Unknown strategy '{value}'"
        raise ConfigInvalid(msg)


@dataclass(frozen=True)
class ScenarioConfig:
    """Every tunable of one simulation run."""

    area: tuple[float, float] = (900.0, 900.0)
    node_count: int = 50
    radio_range: float = 250.0
    sim_duration: float = 1600.0
    rreq_timeout: float = 0.5
    rrep_timeout: float = 3.0
    alpha: float = 0.1
    beta: float = 0.4
    window_W: float = 100.0  # noqa: N815
    detection_D: float = 400.0  # noqa: N815
    selfish_fraction: float = 0.5
    strategy: Strategy = Strategy.DROP_REQ
    drop_prob: float = 1.0
    session_arrival_rate: float = 0.05
    mean_session_duration: float = 60.0
    per_hop_latency: float = 0.002
    channel_loss_prob: float = 0.0
    crosscheck_enabled: bool = True
    seed: int = 1

    latency_jitter: float = 0.0005
    broadcast_jitter: float = 0.01
    initial_ttl: int = 35
    route_lifetime: float = 10.0
    min_row_total: int = 5
    hard_ratio: float = 0.5
    min_obligations: int = 5
    confirm_min: int = 1
    cbr_rate: int = 60
    packet_size: int = 512

    def __post_init__(self) -> None:
        """Reject inconsistent scenarios early."""
        self.validate()

    @property
    def windows_per_detection(self) -> int:
        """Number d of observation windows in one detection window (D = d * W)."""
        return round(self.detection_D / self.window_W)

    def validate(self) -> None:  # noqa: C901
        """Check every invariant of a scenario.

        Raises:
            ConfigInvalid: On the first violated constraint.
        """
        problems: list[str] = []

        if self.node_count < 4:  # noqa: PLR2004
            problems.append("node_count must be at least 4")
        if self.radio_range <= 0:
            problems.append("radio_range must be positive")
        if min(self.area) <= 0:
            problems.append("area dimensions must be positive")
        for name in ("sim_duration", "rreq_timeout", "rrep_timeout", "window_W", "detection_D"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        for name in ("alpha", "beta"):
            if not 0 < getattr(self, name) < 1:
                problems.append(f"{name} must lie in (0, 1)")
        for name in ("selfish_fraction", "drop_prob", "channel_loss_prob"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        if not 0 < self.hard_ratio <= 1:
            problems.append("hard_ratio must lie in (0, 1]")
        if self.window_W > 0 and self.detection_D > 0:
            ratio = self.detection_D / self.window_W
            if ratio < 1 or not math.isclose(ratio, round(ratio), abs_tol=1e-9):
                problems.append("detection_D must be an integer multiple of window_W")
        if self.session_arrival_rate <= 0 or self.mean_session_duration <= 0:
            problems.append("session_arrival_rate and mean_session_duration must be positive")
        if self.initial_ttl < 1:
            problems.append("initial_ttl must be at least 1")
        if self.min_row_total < 1:
            problems.append("min_row_total must be at least 1")
        if min(self.per_hop_latency, self.latency_jitter, self.broadcast_jitter) < 0:
            problems.append("latencies and jitters must be non-negative")
        if self.latency_jitter > self.per_hop_latency:
            problems.append("latency_jitter must not exceed per_hop_latency")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be a 64-bit unsigned integer")

        if problems:
            raise ConfigInvalid("; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-friendly snapshot with stable key order."""
        snapshot = dataclasses.asdict(self)
        snapshot["area"] = list(self.area)
        snapshot["strategy"] = self.strategy.value
        return snapshot

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "ScenarioConfig":
        """Build a config from a `to_dict` snapshot or any mapping of typed field values."""
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in values.items() if k in known}
        if "area" in kwargs:
            kwargs["area"] = tuple(float(x) for x in kwargs["area"])
        if "strategy" in kwargs and not isinstance(kwargs["strategy"], Strategy):
            kwargs["strategy"] = Strategy.parse(kwargs["strategy"])
        return cls(**kwargs)


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False

    msg = f"Not a boolean: '{raw}'"
    raise ConfigInvalid(msg)


def _parse_area(raw: str) -> tuple[float, float]:
    parts = raw.lower().replace("*", "x").replace(",", "x").split("x")
    if len(parts) != 2:  # noqa: PLR2004
        msg = f"area must look like '900x900', got '{raw}'"
        raise ConfigInvalid(msg)
    return float(parts[0]), float(parts[1])


def _coerce(field: dataclasses.Field, raw: str) -> Any:
    """Convert one raw string into the type of ``field``."""
    if field.name == "area":
        return _parse_area(raw)
    if field.name == "strategy":
        return Strategy.parse(raw)
    if field.type in {bool, "bool"}:
        return _parse_bool(raw)
    if field.type in {int, "int"}:
        return int(raw, 0)
    if field.type in {float, "float"}:
        return float(raw)

    return raw


def load_config(
    config_file: Path | None = None, overrides: dict[str, Any] | None = None
) -> ScenarioConfig:
    """Assemble a `ScenarioConfig` from defaults, a config file, the environment and overrides.

    Args:
        config_file: Optional dotenv-style file whose keys are `ScenarioConfig` field names.
        overrides: Typed values (typically CLI flags); entries set to None are ignored.

    Returns:
        The validated scenario configuration.

    Raises:
        ConfigInvalid: For unknown keys, unparsable values or violated invariants.
    """
    raw_values = load_config_values(config_file)
    fields = {f.name.lower(): f for f in dataclasses.fields(ScenarioConfig)}

    unknown = sorted(set(raw_values) - set(fields))
    if unknown:
        msg = f"Unknown configuration keys: {', '.join(unknown)}"
        raise ConfigInvalid(msg)

    kwargs: dict[str, Any] = {}
    for key, field in fields.items():
        raw = get_config_value(raw_values, key, pass_none=True)
        if raw is None:
            continue
        try:
            kwargs[field.name] = _coerce(field, raw)
        except ValueError as e:
            msg = f"Invalid value for {field.name}: '{raw}'"
            raise ConfigInvalid(msg) from e

    for name, value in (overrides or {}).items():
        if value is not None:
            kwargs[name] = value

    config = ScenarioConfig(**kwargs)
    logger.debug(
        f"CONFIG: {config.node_count} nodes, seed {config.seed}, "
        f"{config.strategy.value} p={config.drop_prob}, selfish {config.selfish_fraction:.0%}"
    )
    return config
