"""Entropy-aware graph partitioning and two-phase distributed GraphSAGE training, simulated in one process."""

__version__ = "0.1.0"
