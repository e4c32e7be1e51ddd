"""Multi-range decoupling decoding with gating-adjusting aggregation for motion prediction."""

__version__ = "0.1.0"
