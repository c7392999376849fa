"""Inverse stochastic control through the suboptimality gap, with its
Schrodinger-bridge counterpart, for scalar diffusions."""

__version__ = "0.1.0"
