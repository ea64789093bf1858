"""Byzantine-robust distributed optimization: total-variation penalized stochastic ADMM,
RSA and robust-aggregation SGD on a simulated master-worker cluster."""

__version__ = "0.1.0"
