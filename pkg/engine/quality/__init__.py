"""Cluster-quality diagnostics."""
