"""selfish-mesh test suite."""
