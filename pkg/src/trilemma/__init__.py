"""Desk-scale blockchain protocol laboratory.

Deterministic UTXO ledger, Merkle/SPV verification, proof-of-work consensus
with an adversarial race model, exact connectivity metrics for peer graphs,
relay-cost models (gossip, compact relay, multicast), and a harness that
evaluates the security / scalability / decentralisation predicates over a
protocol configuration.
"""

__version__ = "0.1.0"
