"""Tests for fbf-lab."""
