"""
Run Configuration Loader
========================

Builds the effective RunConfig for a CLI command. Sources, lowest precedence first:

  1. RunConfig field defaults
  2. YAML file (config/default_run.yaml, or --config FILE)
  3. Environment: CLUSTER_OOD_THREADS, CLUSTER_OOD_OUTPUT_DIR, CLUSTER_OOD_SEED
     (a .env file is loaded first)
  4. Explicit CLI flags
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from engine.errors import UsageError
from engine.geometry.distances import DistanceMetric

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "default_run.yaml"

# Knobs that never change output bytes; left out of the snapshot.
EXECUTION_ONLY = ("threads", "output_dir")


def _machine_threads() -> int:
    return os.cpu_count() or 1


class RunConfig(BaseModel):
    """Effective configuration of one run. Serializable; the snapshot re-runs identically."""

    model_config = ConfigDict(extra="forbid")

    manifest: Optional[str] = None
    checkpoints: Optional[str] = None
    output_dir: str = "runs/latest"
    seed: int = 0
    threads: int = Field(default_factory=_machine_threads, ge=1)
    grid: List[str] = Field(default_factory=list)
    k_values: List[int] = Field(default_factory=lambda: [5, 10, 15, 20])
    x_fraction: float = Field(default=0.1, gt=0.0, le=1.0)
    separation_metric: str = "cosine"
    radius_quantile: float = Field(default=0.95, gt=0.0, le=1.0)
    radius_metric: str = "cosine"
    normalize_for_cosine: bool = True
    normalize_for_distance: bool = False
    kmeans_max_iter: int = Field(default=300, ge=1)
    gmm_max_iter: int = Field(default=200, ge=1)
    tol: float = Field(default=1e-6, ge=0.0)
    n_init: int = Field(default=4, ge=1)

    @field_validator("separation_metric")
    @classmethod
    def _separation_metric(cls, value: str) -> str:
        metric = DistanceMetric.parse(value)
        if metric is DistanceMetric.MAHALANOBIS:
            raise ValueError("separation_metric must be cosine or euclidean")
        return metric.value

    @field_validator("radius_metric")
    @classmethod
    def _radius_metric(cls, value: str) -> str:
        return DistanceMetric.parse(value).value

    @field_validator("k_values")
    @classmethod
    def _k_values(cls, value: List[int]) -> List[int]:
        if any(k < 1 for k in value):
            raise ValueError("k_values must all be >= 1")
        return sorted(set(value))

    def snapshot(self) -> Dict[str, Any]:
        """Output-relevant fields as plain data."""
        return self.model_dump(exclude=set(EXECUTION_ONLY))


class RunConfigLoader:
    """Loads and merges run configuration from file, environment and flags."""

    ENV_OVERRIDES = {
        "CLUSTER_OOD_THREADS": "threads",
        "CLUSTER_OOD_OUTPUT_DIR": "output_dir",
        "CLUSTER_OOD_SEED": "seed",
    }

    def __init__(self, config_path: Optional[Union[str, Path]] = None, env_file: Optional[str] = ".env"):
        """
        Initialize run config loader.

        Args:
            config_path: YAML file. Defaults to config/default_run.yaml when present.
            env_file: dotenv file read before the environment is consulted
        """
        self.config_path = Path(config_path) if config_path else None
        self.env_file = env_file

    def _load_file(self) -> Dict[str, Any]:
        path = self.config_path
        if path is None:
            if not DEFAULT_CONFIG_PATH.exists():
                return {}
            path = DEFAULT_CONFIG_PATH
        elif not path.exists():
            raise UsageError(f"config file not found: {path}", "cli")

        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise UsageError(f"invalid YAML in {path}: {e}", "cli")
        if not isinstance(data, dict):
            raise UsageError(f"{path}: top level must be a mapping", "cli")
        logger.info("loaded run config %s", path)
        return data

    def _env_overrides(self) -> Dict[str, str]:
        if self.env_file:
            load_dotenv(self.env_file, override=False)
        overrides = {}
        for variable, field in self.ENV_OVERRIDES.items():
            value = os.getenv(variable)
            if value:
                overrides[field] = value
        return overrides

    def load_config(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """
        Merge every source into a validated RunConfig.

        Args:
            overrides: CLI flag values; None entries are ignored

        Returns:
            RunConfig
        """
        merged: Dict[str, Any] = self._load_file()
        merged.update(self._env_overrides())
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return RunConfig(**merged)
        except ValidationError as e:
            problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
            raise UsageError(f"invalid run configuration: {problems}", "cli")


def load_run_config(config_path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load configuration from the given (or default) YAML file plus environment and flags."""
    return RunConfigLoader(config_path).load_config(overrides)
