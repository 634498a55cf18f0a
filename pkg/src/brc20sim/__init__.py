"""Deterministic UTXO/mempool simulator for BRC20 transfer pinning experiments."""

__version__ = "0.1.0"
