"""Run configuration: defaults, YAML file, environment and flag precedence."""

import pytest

from engine.errors import UsageError
from utils.run_config_loader import RunConfig, RunConfigLoader, load_run_config


def _loader(path=None, env_file=None):
    return RunConfigLoader(path, env_file=env_file)


class TestRunConfig:
    def test_defaults(self):
        config = _loader().load_config()
        assert config.x_fraction == 0.1
        assert config.radius_quantile == 0.95
        assert config.k_values == [5, 10, 15, 20]
        assert config.normalize_for_cosine and not config.normalize_for_distance
        assert config.threads >= 1

    def test_k_values_sorted_and_unique(self):
        assert RunConfig(k_values=[10, 5, 10]).k_values == [5, 10]

    def test_snapshot_leaves_out_execution_knobs(self):
        snapshot = RunConfig(threads=7, output_dir="somewhere").snapshot()
        assert "threads" not in snapshot and "output_dir" not in snapshot
        assert snapshot["seed"] == 0

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("x_fraction: 0.2\nbogus: 1\n")
        with pytest.raises(UsageError, match="bogus"):
            _loader(path).load_config()

    @pytest.mark.parametrize("field, value", [("x_fraction", 0.0), ("x_fraction", 1.5), ("radius_quantile", 0.0), ("threads", 0)])
    def test_out_of_range(self, field, value):
        with pytest.raises(UsageError, match=field):
            load_run_config(None, {field: value})

    def test_mahalanobis_separation_rejected(self):
        with pytest.raises(UsageError, match="separation_metric"):
            load_run_config(None, {"separation_metric": "mahalanobis"})

    def test_metric_names_normalized(self):
        assert load_run_config(None, {"radius_metric": "Euclidean"}).radius_metric == "euclidean"


class TestPrecedence:
    def test_file_over_defaults(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 4\nx_fraction: 0.25\n")
        config = _loader(path).load_config()
        assert (config.seed, config.x_fraction) == (4, 0.25)

    def test_environment_over_file(self, tmp_path, monkeypatch):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 4\n")
        monkeypatch.setenv("CLUSTER_OOD_SEED", "9")
        monkeypatch.setenv("CLUSTER_OOD_THREADS", "2")
        config = _loader(path).load_config()
        assert (config.seed, config.threads) == (9, 2)

    def test_flags_over_environment(self, monkeypatch):
        monkeypatch.setenv("CLUSTER_OOD_SEED", "9")
        assert _loader().load_config({"seed": 1, "output_dir": None}).seed == 1

    def test_dotenv_file(self, tmp_path):
        env_file = tmp_path / ".env"
        env_file.write_text("CLUSTER_OOD_OUTPUT_DIR=from_dotenv\n")
        assert _loader(env_file=str(env_file)).load_config().output_dir == "from_dotenv"


class TestConfigFile:
    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError, match="not found"):
            _loader(tmp_path / "absent.yaml").load_config()

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: [1, 2\n")
        with pytest.raises(UsageError, match="invalid YAML"):
            _loader(path).load_config()

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(UsageError, match="mapping"):
            _loader(path).load_config()
