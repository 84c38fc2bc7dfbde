# type: ignore
"""Test helper utilities."""

import numpy as np
import pytest

from selfish_mesh.utils import (
    ConfigInvalid,
    format_time,
    get_config_value,
    load_config_values,
    quantize,
    substream,
)


def test_load_config_values(tmp_path, mocker):
    """Test load_config_values."""
    config_file = tmp_path / "scenario.env"
    config_file.write_text('NODE_COUNT=30\nstrategy="DropRep"\n')

    # WHEN only a file is given
    # THEN keys are lower-cased and quotes stripped
    mocker.patch.dict("os.environ", {}, clear=True)
    assert load_config_values(config_file) == {"node_count": "30", "strategy": "DropRep"}

    # WHEN the environment sets the same field
    # THEN the environment wins
    mocker.patch.dict("os.environ", {"SELFISH_MESH_NODE_COUNT": "40", "UNRELATED": "x"}, clear=True)
    assert load_config_values(config_file)["node_count"] == "40"

    # WHEN no file is given
    # THEN only the environment is read
    assert load_config_values(None) == {"node_count": "40"}

    # WHEN the file does not exist
    # THEN raise ConfigInvalid
    with pytest.raises(ConfigInvalid):
        load_config_values(tmp_path / "missing.env")


def test_get_config_value():
    """Test get_config_value."""
    values = {"seed": "3"}

    with pytest.raises(ConfigInvalid):
        get_config_value(values, "NOT_A_VALUE")

    assert get_config_value(values, "NOT_A_VALUE", pass_none=True) is None
    assert get_config_value(values, "NOT_A_VALUE", default="test") == "test"
    assert get_config_value(values, "SEED") == "3"


def test_substream():
    """Test substream."""
    # WHEN the same seed and name are requested twice
    # THEN the draws are identical
    assert substream(5, "traffic").random() == substream(5, "traffic").random()

    # WHEN names or seeds differ
    # THEN the streams differ
    assert substream(5, "traffic").random() != substream(5, "channel").random()
    assert substream(5, "traffic").random() != substream(6, "traffic").random()

    # Streams are independent of how much the others were used
    expected = np.random.default_rng(np.random.SeedSequence(entropy=5, spawn_key=(3,))).random(3)
    assert substream(5, "channel").random(3).tolist() == expected.tolist()


@pytest.mark.parametrize(
    ("seconds", "expected"),
    [
        (0.0, "0.000000"),
        (1600, "1600.000000"),
        (0.1 + 0.2, "0.300000"),
        (12.3456789, "12.345679"),
    ],
)
def test_format_time(seconds, expected):
    """Test format_time and its round trip through quantize."""
    assert format_time(seconds) == expected
    assert float(format_time(quantize(seconds))) == quantize(seconds)
