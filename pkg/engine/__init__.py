"""
Cluster OOD Engine

Cluster-based out-of-distribution detection over pre-computed embeddings:
cluster construction, cluster-quality diagnostics, distance scoring with
cluster / global reference thresholds, and AUROC sweeps.
"""

__version__ = "1.0.0"
