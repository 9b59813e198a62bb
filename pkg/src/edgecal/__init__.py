"""Calibrated probabilities of causal edge types.

Bootstrap a constraint-based PAG search to get per-pair edge-class
frequencies, then recalibrate them with a small neural-network ensemble
trained on a handful of pairs whose true edge class is known.
"""

__version__ = "0.1.0"
