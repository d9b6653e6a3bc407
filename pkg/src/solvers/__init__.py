"""Iteration engines."""
