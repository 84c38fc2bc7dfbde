"""Helper functions for selfish_mesh."""

import os
from pathlib import Path

import numpy as np
from dotenv import dotenv_values
from loguru import logger

from selfish_mesh.utils.errors import ConfigInvalid

ENV_PREFIX = "SELFISH_MESH_"

# Fixed spawn keys keep each substream stable when another one is added or unused.
SUBSTREAMS: dict[str, int] = {
    "placement": 0,
    "traffic": 1,
    "behavior": 2,
    "channel": 3,
}

TIME_DECIMALS = 6


def load_config_values(config_file: Path | None = None) -> dict[str, str]:
    """Collect raw configuration values from a config file and the environment.

    Reads an optional ``key=value`` file with python-dotenv, then overlays any environment
    variable named ``SELFISH_MESH_<FIELD>``. Keys are lower-cased so ``NODE_COUNT=50`` and
    ``node_count=50`` are equivalent.

    Args:
        config_file: Path to a dotenv-style scenario file. ``None`` skips the file layer.

    Returns:
        A mapping from lower-case field name to its raw string value.

    Raises:
        ConfigInvalid: If ``config_file`` is given but does not exist.
    """
    values: dict[str, str] = {}

    if config_file is not None:
        if not config_file.is_file():
            msg = f"Config file not found: {config_file}"
            raise ConfigInvalid(msg)

        logger.debug(f"CONFIG: Read {config_file}")
        for key, value in dotenv_values(config_file).items():
            if value is not None:
                values[key.lower()] = value.strip().strip('"')

    for key, value in os.environ.items():
        if key.startswith(ENV_PREFIX):
            field = key.removeprefix(ENV_PREFIX).lower()
            logger.debug(f"CONFIG: Environment override for {field}")
            values[field] = value.strip().strip('"')

    return values


def get_config_value(
    values: dict[str, str],
    var_name: str,
    default: str | None = None,
    pass_none: bool = False,  # noqa: FBT001, FBT002
) -> str | None:
    """Retrieve one raw configuration value.

    Args:
        values: Raw values as returned by `load_config_values`.
        var_name: The field name to look up (case-insensitive).
        default: Returned when the field is absent.
        pass_none: If True, return None for an absent field with no default instead of raising.

    Returns:
        The raw value, the default, or None.

    Raises:
        ConfigInvalid: If the field is absent, no default is given and `pass_none` is False.
    """
    var_value = values.get(var_name.lower())
    if var_value is None:
        if default is not None:
            return default

        if pass_none:
            return None

        msg = f"Required configuration value '{var_name}' is not set"
        raise ConfigInvalid(msg)

    return var_value


def substream(seed: int, name: str) -> np.random.Generator:
    """Return the named random substream for a scenario seed.

    Args:
        seed: The scenario's 64-bit seed.
        name: One of `SUBSTREAMS`.

    Returns:
        A numpy Generator whose draws depend only on ``seed`` and ``name``.
    """
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(SUBSTREAMS[name],))
    return np.random.default_rng(seq)


def quantize(seconds: float) -> float:
    """Round a simulation time to the trace resolution (microseconds)."""
    return round(seconds, TIME_DECIMALS)


def format_time(seconds: float) -> str:
    """Render a simulation time with the trace's fixed six decimals.

    >>> format_time(0.5)
    '0.500000'
    """
    return f"{seconds:.{TIME_DECIMALS}f}"
