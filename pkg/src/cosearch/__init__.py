"""Joint differentiable search over network architecture, per-op weight
precision and hardware parallelism, with analytical device cost models and
a brute-force verification oracle."""

__version__ = "0.1.0"
