"""Sign-based federated SGD: stochastic 1-bit compressors, majority-vote servers,
Byzantine voters, and wrong-aggregation analysis."""

__version__ = "0.1.0"
