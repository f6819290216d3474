"""Benchmark harness and the ``bench`` CLI."""
