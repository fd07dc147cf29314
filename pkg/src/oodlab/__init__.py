"""Desk-scale out-of-distribution detection lab.

Cross-entropy, label smoothing and adaptive label smoothing on a small MLP,
eight post-hoc knownness scores, and the usual open-set metrics.
"""

__version__ = "0.1.0"
