"""Minimal tensor layer kit and the two byte-level network models."""
