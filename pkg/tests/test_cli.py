"""Tests for the experiment harness: config validation, runs, summaries,
correlation export, and byte-level determinism."""

import json
import os

import numpy as np
import pytest

from adareg.cli import (
    ExperimentConfig,
    _load_base_cached,
    export_correlation,
    main,
    run_experiment,
    summarize,
)
from adareg.errors import (
    ConfigError,
    EmptyDirectory,
    MissingWeights,
    SchemaMismatch,
)
from mnist_surrogate import make_dataset
from adareg.data import write_idx


@pytest.fixture(autouse=True)
def _fresh_dataset_cache():
    _load_base_cached.cache_clear()
    yield
    _load_base_cached.cache_clear()


def _synth_config(out_dir, **overrides):
    cfg = {
        "dataset": {
            "kind": "synthetic_multitask",
            "n_train": 48,
            "n_test": 24,
            "input_dim": 4,
            "num_tasks": 2,
            "task_correlation": 0.5,
            "noise_std": 0.2,
            "seed": 3,
        },
        "architecture": {"layer_sizes": [4, 6, 2]},
        "methods": ["none", "adareg"],
        "schedule": {
            "outer_loops": 1,
            "epochs_per_block": 2,
            "batch_size": 16,
            "learning_rate": 0.1,
        },
        "bounds_v": 10.0,
        "lambda": 0.01,
        "training_sizes": [32],
        "seeds": [0],
        "output_dir": str(out_dir),
    }
    cfg.update(overrides)
    return cfg


def _idx_config(data_dir, out_dir, **overrides):
    train = make_dataset(120, seed=7)
    test = make_dataset(40, seed=8)
    write_idx(train, data_dir / "tr-img", data_dir / "tr-lab", 28, 28)
    write_idx(test, data_dir / "te-img", data_dir / "te-lab", 28, 28)
    cfg = {
        "dataset": {
            "kind": "mnist_idx",
            "train_images": str(data_dir / "tr-img"),
            "train_labels": str(data_dir / "tr-lab"),
            "test_images": str(data_dir / "te-img"),
            "test_labels": str(data_dir / "te-lab"),
        },
        "architecture": {"layer_sizes": [784, 8, 10]},
        "methods": ["adareg"],
        "schedule": {
            "outer_loops": 1,
            "epochs_per_block": 1,
            "batch_size": 64,
            "learning_rate": 0.2,
        },
        "training_sizes": [50],
        "seeds": [0],
        "output_dir": str(out_dir),
    }
    cfg.update(overrides)
    return cfg


def _read_all_outputs(out_dir):
    return {
        p.name: p.read_bytes()
        for p in sorted(out_dir.iterdir())
        if p.is_file()
    }


class TestConfigValidation:
    def test_valid_config_parses(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_synth_config(tmp_path))
        assert cfg.methods == ("none", "adareg")
        assert cfg.schedule.batch_size == 16

    def test_missing_required_key(self, tmp_path):
        raw = _synth_config(tmp_path)
        del raw["schedule"]
        with pytest.raises(ConfigError, match="schedule"):
            ExperimentConfig.from_dict(raw)

    def test_unknown_method(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown method"):
            ExperimentConfig.from_dict(_synth_config(tmp_path, methods=["sgd"]))

    def test_dropout_method_needs_rate(self, tmp_path):
        with pytest.raises(ConfigError, match="dropout_rate"):
            ExperimentConfig.from_dict(_synth_config(tmp_path, methods=["dropout"]))

    def test_weight_decay_method_needs_coefficient(self, tmp_path):
        with pytest.raises(ConfigError, match="weight_decay"):
            ExperimentConfig.from_dict(
                _synth_config(tmp_path, methods=["weight_decay"])
            )

    def test_dataset_kind_keys_checked(self, tmp_path):
        raw = _synth_config(tmp_path)
        raw["dataset"] = {"kind": "mnist_idx", "train_images": "x"}
        with pytest.raises(ConfigError, match="train_labels"):
            ExperimentConfig.from_dict(raw)

    def test_bad_training_sizes(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(_synth_config(tmp_path, training_sizes=[0]))

    def test_bad_json_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="valid JSON"):
            ExperimentConfig.from_file(p)

    def test_validate_subcommand(self, tmp_path, capsys):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(_synth_config(tmp_path / "runs")))
        assert main(["validate", str(p)]) == 0
        assert "config OK" in capsys.readouterr().out

    def test_validate_subcommand_rejects(self, tmp_path, capsys):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"dataset": {}}))
        assert main(["validate", str(p)]) == 1
        assert "error:" in capsys.readouterr().err


class TestRunExperiment:
    def test_smoke_run_writes_expected_files(self, tmp_path):
        out = tmp_path / "runs"
        config = ExperimentConfig.from_dict(_synth_config(out))
        assert run_experiment(config) == 0
        for method in ("none", "adareg"):
            for suffix in ("metrics.csv", "summary.json", "weights.npz"):
                assert (out / f"{method}_n32_s0_{suffix}").exists()
        assert (out / "resolved_config.json").exists()

    def test_metrics_csv_shape(self, tmp_path):
        out = tmp_path / "runs"
        run_experiment(ExperimentConfig.from_dict(_synth_config(out)))
        lines = (out / "none_n32_s0_metrics.csv").read_text().strip().splitlines()
        assert lines[0] == (
            "epoch,outer_iter,train_loss,train_objective,test_loss,"
            "train_metric,test_metric"
        )
        assert len(lines) == 3  # header + 2 epochs

    def test_rerun_is_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_experiment(ExperimentConfig.from_dict(_synth_config(out1)))
        run_experiment(ExperimentConfig.from_dict(_synth_config(out2, output_dir=str(out2))))
        a, b = _read_all_outputs(out1), _read_all_outputs(out2)
        assert a.keys() == b.keys()
        for name in a:
            if name == "resolved_config.json":
                continue  # embeds the differing output_dir
            assert a[name] == b[name], f"{name} differs"

    def test_parallel_jobs_match_sequential(self, tmp_path):
        out1, out2 = tmp_path / "seq", tmp_path / "par"
        run_experiment(ExperimentConfig.from_dict(_synth_config(out1)))
        run_experiment(
            ExperimentConfig.from_dict(_synth_config(out2, output_dir=str(out2))),
            jobs=2,
        )
        a, b = _read_all_outputs(out1), _read_all_outputs(out2)
        for name in a:
            if name == "resolved_config.json":
                continue
            assert a[name] == b[name], f"{name} differs"

    def test_seed_override(self, tmp_path):
        out = tmp_path / "runs"
        config = ExperimentConfig.from_dict(_synth_config(out))
        run_experiment(config, seed_override=(5, 6))
        assert (out / "none_n32_s5_summary.json").exists()
        assert (out / "none_n32_s6_summary.json").exists()
        assert not (out / "none_n32_s0_summary.json").exists()

    def test_idx_pipeline_and_env_root(self, tmp_path, monkeypatch):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        out = tmp_path / "runs"
        cfg = _idx_config(data_dir, out)
        # switch to paths relative to ADAREG_DATA_DIR
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            cfg["dataset"][key] = os.path.basename(cfg["dataset"][key])
        monkeypatch.setenv("ADAREG_DATA_DIR", str(data_dir))
        run_experiment(ExperimentConfig.from_dict(cfg))
        summary = json.loads((out / "adareg_n50_s0_summary.json").read_text())
        assert summary["metric_name"] == "accuracy"
        assert summary["training_size"] == 50
        with np.load(out / "adareg_n50_s0_weights.npz") as z:
            assert z["weight_1"].shape == (10, 8)
            assert "omega_r" in z and "sigma_c" in z

    def test_architecture_dataset_mismatch(self, tmp_path):
        out = tmp_path / "runs"
        raw = _synth_config(out)
        raw["architecture"]["layer_sizes"] = [5, 6, 2]
        with pytest.raises(ConfigError, match="input dim"):
            run_experiment(ExperimentConfig.from_dict(raw))


class TestSummarize:
    def test_mean_std_match_recomputation(self, tmp_path):
        out = tmp_path / "runs"
        config = ExperimentConfig.from_dict(
            _synth_config(out, seeds=[0, 1, 2], methods=["none"])
        )
        run_experiment(config)
        path = summarize(out)
        lines = path.read_text().strip().splitlines()
        header = lines[0].split(",")
        row = lines[1].split(",")
        finals = []
        for seed in (0, 1, 2):
            s = json.loads((out / f"none_n32_s{seed}_summary.json").read_text())
            finals.append(s["final_test_metric"])
        finals = np.array(finals)
        got_mean = float(row[header.index("test_metric_mean")])
        got_std = float(row[header.index("test_metric_std")])
        assert abs(got_mean - finals.mean()) < 1e-12
        assert abs(got_std - finals.std()) < 1e-12
        # regression summaries carry per-task explained-variance columns
        assert "ev_task0_mean" in header and "ev_task1_std" in header

    def test_one_row_per_method_size(self, tmp_path):
        out = tmp_path / "runs"
        config = ExperimentConfig.from_dict(
            _synth_config(out, seeds=[0, 1], training_sizes=[24, 32])
        )
        run_experiment(config)
        lines = summarize(out).read_text().strip().splitlines()
        assert len(lines) == 1 + 2 * 2  # header + methods x sizes

    def test_empty_directory(self, tmp_path):
        with pytest.raises(EmptyDirectory):
            summarize(tmp_path)

    def test_schema_mismatch(self, tmp_path):
        out = tmp_path / "runs"
        run_experiment(ExperimentConfig.from_dict(_synth_config(out, methods=["none"])))
        doctored = json.loads((out / "none_n32_s0_summary.json").read_text())
        doctored["metric_name"] = "accuracy"
        (out / "fake_n32_s1_summary.json").write_text(json.dumps(doctored))
        with pytest.raises(SchemaMismatch):
            summarize(out)

    def test_unknown_schema_version(self, tmp_path):
        (tmp_path / "x_summary.json").write_text(json.dumps({"schema": "other"}))
        with pytest.raises(SchemaMismatch):
            summarize(tmp_path)


class TestExportCorrelation:
    def test_classification_export(self, tmp_path):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        out = tmp_path / "runs"
        run_experiment(ExperimentConfig.from_dict(_idx_config(data_dir, out)))
        paths = export_correlation(out, layer_index=1)
        assert len(paths) == 1
        lines = paths[0].read_text().strip().splitlines()
        assert lines[0].split(",")[1:] == [f"class_{i}" for i in range(10)]
        matrix = np.array(
            [[float(x) for x in line.split(",")[1:]] for line in lines[1:]]
        )
        assert matrix.shape == (10, 10)
        np.testing.assert_allclose(np.diag(matrix), 1.0)

    def test_regression_export_is_task_labeled(self, tmp_path):
        out = tmp_path / "runs"
        run_experiment(
            ExperimentConfig.from_dict(_synth_config(out, methods=["adareg"]))
        )
        paths = export_correlation(out, layer_index=1)
        lines = paths[0].read_text().strip().splitlines()
        assert lines[0].split(",")[1:] == ["task_0", "task_1"]

    def test_rerun_identical_bytes(self, tmp_path):
        out = tmp_path / "runs"
        run_experiment(ExperimentConfig.from_dict(_synth_config(out, methods=["adareg"])))
        first = export_correlation(out, layer_index=1)[0].read_bytes()
        second = export_correlation(out, layer_index=1)[0].read_bytes()
        assert first == second

    def test_missing_weights(self, tmp_path):
        with pytest.raises(MissingWeights):
            export_correlation(tmp_path, layer_index=0)

    def test_missing_layer_index(self, tmp_path):
        out = tmp_path / "runs"
        run_experiment(ExperimentConfig.from_dict(_synth_config(out, methods=["none"])))
        with pytest.raises(MissingWeights):
            export_correlation(out, layer_index=5)


class TestMainEntry:
    def test_run_and_summarize_via_main(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        out = tmp_path / "runs"
        cfg_path.write_text(json.dumps(_synth_config(out, methods=["none"])))
        assert main(["run", str(cfg_path)]) == 0
        assert main(["summarize", str(out)]) == 0
        assert (out / "summary.csv").exists()

    def test_output_override(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(_synth_config(tmp_path / "ignored")))
        override = tmp_path / "other"
        assert main(["run", str(cfg_path), "--output", str(override)]) == 0
        assert (override / "none_n32_s0_summary.json").exists()

    def test_bad_seed_override(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(_synth_config(tmp_path / "runs")))
        assert main(["run", str(cfg_path), "--seed-override", "a,b"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_export_correlation_via_main(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        out = tmp_path / "runs"
        cfg_path.write_text(json.dumps(_synth_config(out, methods=["adareg"])))
        main(["run", str(cfg_path)])
        assert main(["export-correlation", str(out), "--layer", "1"]) == 0
