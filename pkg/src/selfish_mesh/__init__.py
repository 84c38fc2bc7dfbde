"""selfish-mesh package."""
