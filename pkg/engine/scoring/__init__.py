"""Reference-distribution scoring."""
