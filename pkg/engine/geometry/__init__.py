"""Distance metrics and regularized Gaussian estimates."""
