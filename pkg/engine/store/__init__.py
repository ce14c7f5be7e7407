"""Embedding storage: binary + manifest files, CSV, synthetic blobs."""
