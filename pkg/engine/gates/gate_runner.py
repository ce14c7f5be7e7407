#!/usr/bin/env python3
"""
Cluster OOD Engine - Gate Runner (Validation Layer)

Checks a loaded dataset before a run:
  - splits: required splits are present
  - dimensions: every split shares D
  - labels: labels exist where ground-truth clusters or purity need them
  - cluster sizes: requested K fits the training split

Errors stop the run; warnings are reported and the run continues.

Usage:
    python -m engine.gates.gate_runner <manifest.txt>
"""

import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from engine.errors import DataError, OodError
from engine.store.embedding_store import EmbeddingSet, load_manifest

logger = logging.getLogger(__name__)


class GateRunner:
    """Validates embedding splits against the preconditions of a run."""

    def __init__(self, sets: Dict[str, EmbeddingSet]):
        """
        Initialize gate runner.

        Args:
            sets: Loaded splits keyed by split name
        """
        self.sets = sets
        self.errors: List[str] = []
        self.warnings: List[str] = []

    def validate_splits(self, required: Sequence[str], need_ood: bool = False) -> bool:
        """
        Required splits must be present.

        Args:
            required: Split names that must exist
            need_ood: At least one OOD split (ood or ood_<name>) must exist

        Returns:
            True if validation passes, False otherwise
        """
        passed = True
        for split in required:
            if split not in self.sets:
                self.errors.append(f"splits: missing required split '{split}'")
                passed = False

        if need_ood and not self.ood_names():
            self.errors.append("splits: no OOD split (ood or ood_<name>)")
            passed = False

        return passed

    def validate_dimensions(self) -> bool:
        dimensions = {name: s.dimension for name, s in self.sets.items()}
        if len(set(dimensions.values())) > 1:
            self.errors.append(f"dimensions: splits disagree on D: {dimensions}")
            return False
        return True

    def validate_labels(self, split: str, needed: bool) -> bool:
        """
        Labels must exist on a split when ground-truth clusters or purity are requested.

        Returns:
            True if validation passes, False otherwise
        """
        embedding_set = self.sets.get(split)
        if embedding_set is None:
            return True
        if needed and not embedding_set.has_labels:
            self.errors.append(f"labels: split '{split}' has no labels but ground-truth clusters were requested")
            return False
        if not needed and not embedding_set.has_labels:
            self.warnings.append(f"labels: split '{split}' is unlabelled; purity and GT cells are skipped")
        return True

    def validate_cluster_sizes(self, split: str, k_values: Sequence[int], mahalanobis: bool = False) -> bool:
        """
        Every K must satisfy K <= N. With Mahalanobis scoring, clusters smaller than D
        have singular covariances and rely on regularization, which is flagged.
        """
        embedding_set = self.sets.get(split)
        if embedding_set is None:
            return True

        passed = True
        for k in k_values:
            if k > embedding_set.size:
                self.errors.append(f"cluster sizes: K={k} exceeds N={embedding_set.size} of '{split}'")
                passed = False
            elif mahalanobis and embedding_set.size / k < embedding_set.dimension:
                self.warnings.append(
                    f"cluster sizes: K={k} leaves ~{embedding_set.size // k} samples per cluster in D={embedding_set.dimension}; "
                    "covariances are singular before regularization"
                )
        return passed

    def ood_names(self) -> List[str]:
        return [name for name, s in self.sets.items() if s.split == "ood"]

    def run_all_gates(self, gates: List[Tuple[str, Callable[[], bool]]]) -> bool:
        """
        Run the given gates in order and print a report.

        Returns:
            True if all gates pass, False if any fail
        """
        all_passed = True
        for name, gate in gates:
            passed = gate()
            print(f"Gate: {name}... {'[PASS]' if passed else '[FAIL]'}")
            all_passed = all_passed and passed

        if self.errors:
            print(f"ERRORS ({len(self.errors)}):")
            for error in self.errors:
                print(f"  [X] {error}")

        if self.warnings:
            print(f"WARNINGS ({len(self.warnings)}):")
            for warning in self.warnings:
                print(f"  [!] {warning}")
                logger.warning(warning)

        return all_passed and not self.errors

    def require(self, gates: List[Tuple[str, Callable[[], bool]]]) -> None:
        """Run gates and raise DataError listing every error on failure."""
        if not self.run_all_gates(gates):
            raise DataError("; ".join(self.errors), "gates")


def main(argv: Optional[List[str]] = None) -> int:
    """Validate a manifest's splits for a full sweep."""
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) < 1:
        print("Usage: python -m engine.gates.gate_runner <manifest.txt>")
        return 1

    manifest = Path(argv[0])
    try:
        sets = load_manifest(manifest)
    except OodError as e:
        print(f"[FAIL] {e}")
        return e.exit_code

    runner = GateRunner(sets)
    success = runner.run_all_gates([
        ("splits", lambda: runner.validate_splits(["train", "test_id"], need_ood=True)),
        ("dimensions", runner.validate_dimensions),
        ("labels", lambda: runner.validate_labels("train", needed=False)),
    ])
    print("Result: [SUCCESS] ALL GATES PASSED" if success else "Result: [FAILURE] VALIDATION FAILED")
    return 0 if success else 2


if __name__ == "__main__":
    sys.exit(main())
