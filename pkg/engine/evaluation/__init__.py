"""ROC / AUROC and the sweep harness."""
