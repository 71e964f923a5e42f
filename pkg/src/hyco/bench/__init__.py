"""Benchmark harness: experiment presets, command line and artifacts."""
