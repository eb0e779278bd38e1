"""Benchmark tooling: file formats, synthetic data, sweeps and the command line."""
