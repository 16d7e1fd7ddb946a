"""Pytest anchor; shared builders live in builders.py, oracles in oracles.py."""
