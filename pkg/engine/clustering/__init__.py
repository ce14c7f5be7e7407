"""Cluster construction: labels, single cluster, k-means, GMM."""
