"""Experiment harness: config validation, runs, summaries, and exports.

Subcommands:

    adareg run <config.json> [--seed-override 0,1] [--jobs N] [--output DIR]
    adareg summarize <run_dir>
    adareg export-correlation <run_dir> --layer N
    adareg validate <config.json>

A config sweeps every (method x training size x seed) cell, writing one
per-epoch metrics CSV, one summary JSON, and one weights NPZ per cell.
Outputs are byte-reproducible: rerunning the same config and seeds yields
identical files (wall-clock timing goes to stderr only, never into files).
Dataset paths resolve against ADAREG_DATA_DIR when set.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    DatasetKind,
    SyntheticMultitaskSpec,
    load_csv_regression,
    load_idx,
    standardize_inputs,
    subsample,
    synth_multitask,
)
from .diagnostics import SpectrumReport, correlation_matrix, explained_variance
from .errors import (
    AdaRegError,
    ConfigError,
    EmptyDirectory,
    MissingWeights,
    SchemaMismatch,
)
from .net import LossKind, Network
from .optimizer import BcdSchedule, MetricLog, predict, run_adareg
from .spectral import SpectralBounds

__all__ = [
    "ExperimentConfig",
    "MetricLog",
    "run_experiment",
    "summarize",
    "export_correlation",
    "main",
]

METHODS = (
    "none",
    "weight_decay",
    "dropout",
    "adareg",
    "adareg+weight_decay",
    "adareg+dropout",
)

SUMMARY_SCHEMA = "adareg-run-v1"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see README for the JSON schema."""

    dataset: dict
    layer_sizes: tuple[int, ...]
    methods: tuple[str, ...]
    schedule: BcdSchedule
    bounds_v: float
    lam: float | None  # None resolves to 1 / (2 * p * d) of the target layer
    weight_decay: float
    dropout_rate: float
    training_sizes: tuple[int | None, ...]
    seeds: tuple[int, ...]
    regularized_layer_index: int
    output_dir: str

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                raw = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        def need(key, kind, where=raw, ctx="config"):
            if key not in where:
                raise ConfigError(f"{ctx} is missing required key {key!r}")
            val = where[key]
            if kind is float:
                if not isinstance(val, (int, float)) or isinstance(val, bool):
                    raise ConfigError(f"{ctx}[{key!r}] must be a number")
                return float(val)
            if kind is int:
                if not isinstance(val, int) or isinstance(val, bool):
                    raise ConfigError(f"{ctx}[{key!r}] must be an integer")
                return val
            if not isinstance(val, kind):
                raise ConfigError(
                    f"{ctx}[{key!r}] must be {kind.__name__}, got {type(val).__name__}"
                )
            return val

        dataset = need("dataset", dict)
        kind = dataset.get("kind")
        if kind not in ("mnist_idx", "csv_regression", "synthetic_multitask"):
            raise ConfigError(f"unknown dataset kind {kind!r}")
        required_keys = {
            "mnist_idx": ("train_images", "train_labels", "test_images", "test_labels"),
            "csv_regression": ("train_path", "test_path", "num_targets"),
            "synthetic_multitask": ("n_train", "n_test"),
        }[kind]
        for key in required_keys:
            if key not in dataset:
                raise ConfigError(f"dataset kind {kind!r} needs key {key!r}")
        arch = need("architecture", dict)
        sizes = need("layer_sizes", list, arch, "architecture")
        if len(sizes) < 2 or any(
            not isinstance(s, int) or s < 1 for s in sizes
        ):
            raise ConfigError("layer_sizes must be >= 2 positive integers")

        methods = tuple(need("methods", list))
        if not methods:
            raise ConfigError("methods must not be empty")
        for m in methods:
            if m not in METHODS:
                raise ConfigError(
                    f"unknown method {m!r}; choose from {', '.join(METHODS)}"
                )

        sched_raw = need("schedule", dict)
        schedule = BcdSchedule(
            need("outer_loops", int, sched_raw, "schedule"),
            need("epochs_per_block", int, sched_raw, "schedule"),
            need("batch_size", int, sched_raw, "schedule"),
            need("learning_rate", float, sched_raw, "schedule"),
        )

        bounds_v = float(raw.get("bounds_v", 10.0))
        if bounds_v < 1.0:
            raise ConfigError("bounds_v must be >= 1")
        lam = raw.get("lambda")
        if lam is not None:
            lam = float(lam)
            if lam < 0.0:
                raise ConfigError("lambda must be >= 0")
        weight_decay = float(raw.get("weight_decay", 0.0))
        dropout_rate = float(raw.get("dropout_rate", 0.0))
        if weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if not 0.0 <= dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if any("weight_decay" in m for m in methods) and weight_decay == 0.0:
            raise ConfigError(
                "a weight_decay method is listed but weight_decay is 0"
            )
        if any("dropout" in m for m in methods) and dropout_rate == 0.0:
            raise ConfigError("a dropout method is listed but dropout_rate is 0")

        training_sizes = raw.get("training_sizes")
        if training_sizes is None:
            training_sizes = (None,)
        else:
            if not isinstance(training_sizes, list) or not training_sizes:
                raise ConfigError("training_sizes must be a non-empty list")
            for s in training_sizes:
                if not isinstance(s, int) or s < 1:
                    raise ConfigError("training_sizes entries must be positive")
            training_sizes = tuple(training_sizes)

        seeds = need("seeds", list)
        if not seeds or any(not isinstance(s, int) or s < 0 for s in seeds):
            raise ConfigError("seeds must be a non-empty list of ints >= 0")

        return cls(
            dataset=dataset,
            layer_sizes=tuple(sizes),
            methods=methods,
            schedule=schedule,
            bounds_v=bounds_v,
            lam=lam,
            weight_decay=weight_decay,
            dropout_rate=dropout_rate,
            training_sizes=training_sizes,
            seeds=tuple(seeds),
            regularized_layer_index=int(raw.get("regularized_layer_index", -1)),
            output_dir=str(raw.get("output_dir", "runs")),
        )

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "architecture": {"layer_sizes": list(self.layer_sizes)},
            "methods": list(self.methods),
            "schedule": {
                "outer_loops": self.schedule.outer_loops,
                "epochs_per_block": self.schedule.epochs_per_block,
                "batch_size": self.schedule.batch_size,
                "learning_rate": self.schedule.learning_rate,
            },
            "bounds_v": self.bounds_v,
            "lambda": self.lam,
            "weight_decay": self.weight_decay,
            "dropout_rate": self.dropout_rate,
            "training_sizes": [s for s in self.training_sizes],
            "seeds": list(self.seeds),
            "regularized_layer_index": self.regularized_layer_index,
            "output_dir": self.output_dir,
        }


def _resolve_path(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get("ADAREG_DATA_DIR")
    return (Path(root) / p) if root else p


def _load_base_datasets(dataset_json: str) -> tuple[Dataset, Dataset]:
    return _load_base_cached(dataset_json)


@lru_cache(maxsize=4)
def _load_base_cached(dataset_json: str) -> tuple[Dataset, Dataset]:
    spec = json.loads(dataset_json)
    kind = spec["kind"]
    if kind == "mnist_idx":
        train = load_idx(
            _resolve_path(spec["train_images"]),
            _resolve_path(spec["train_labels"]),
        )
        test = load_idx(
            _resolve_path(spec["test_images"]),
            _resolve_path(spec["test_labels"]),
        )
        return train, test
    if kind == "csv_regression":
        num_targets = int(spec["num_targets"])
        train = load_csv_regression(_resolve_path(spec["train_path"]), num_targets)
        test = load_csv_regression(_resolve_path(spec["test_path"]), num_targets)
        if spec.get("standardize", True):
            train, test = standardize_inputs(train, test)
        return train, test
    synth = SyntheticMultitaskSpec(
        n_train=int(spec["n_train"]),
        n_test=int(spec["n_test"]),
        input_dim=int(spec.get("input_dim", 21)),
        num_tasks=int(spec.get("num_tasks", 7)),
        task_correlation=float(spec.get("task_correlation", 0.0)),
        noise_std=float(spec.get("noise_std", 0.1)),
        seed=int(spec.get("seed", 0)),
    )
    train, test = synth_multitask(synth)
    if spec.get("standardize", True):
        train, test = standardize_inputs(train, test)
    return train, test


def _method_knobs(config: ExperimentConfig, method: str, p: int, d: int):
    """Map a method name to (lambda, weight_decay, dropout_rate)."""
    lam = config.lam if config.lam is not None else 1.0 / (2.0 * p * d)
    uses_prior = method.startswith("adareg")
    return (
        lam if uses_prior else 0.0,
        config.weight_decay if "weight_decay" in method else 0.0,
        config.dropout_rate if "dropout" in method else 0.0,
    )


def _cell_name(method: str, size: int | None, seed: int) -> str:
    return f"{method}_n{'full' if size is None else size}_s{seed}"


def _run_cell(
    config: ExperimentConfig,
    method: str,
    size: int | None,
    seed: int,
    out_dir: Path,
) -> str:
    train_full, test = _load_base_datasets(json.dumps(config.dataset, sort_keys=True))
    if size is None or size == train_full.n:
        train = subsample(train_full, train_full.n, [seed, 101])
    else:
        train = subsample(
            train_full,
            size,
            [seed, 101],
            stratified=train_full.kind == DatasetKind.CLASSIFICATION,
        )

    if train.inputs.shape[1] != config.layer_sizes[0]:
        raise ConfigError(
            f"architecture expects input dim {config.layer_sizes[0]}, dataset "
            f"has {train.inputs.shape[1]}"
        )
    out_dim = config.layer_sizes[-1]
    if train.kind == DatasetKind.CLASSIFICATION:
        loss = LossKind.SOFTMAX_CROSS_ENTROPY
        if train_full.num_classes > out_dim:
            raise ConfigError(
                f"{train_full.num_classes} classes exceed output dim {out_dim}"
            )
    else:
        loss = LossKind.SQUARED_ERROR
        if train.targets.shape[1] != out_dim:
            raise ConfigError(
                f"{train.targets.shape[1]} target columns but output dim {out_dim}"
            )

    network = Network.init(
        list(config.layer_sizes),
        loss,
        [seed, 202],
        config.regularized_layer_index,
    )
    p, d = network.regularized_weight.shape
    lam, wd, dr = _method_knobs(config, method, p, d)
    bounds = SpectralBounds.from_v(config.bounds_v)

    started = time.perf_counter()
    state, log = run_adareg(
        network,
        config.schedule,
        train,
        bounds,
        lam,
        seed,
        test_dataset=test,
        weight_decay=wd,
        dropout_rate=dr,
    )
    log.wall_seconds = time.perf_counter() - started

    final = state.net
    log.spectrum_per_layer = [
        {"layer": i, **SpectrumReport.of(layer.weight).__dict__}
        for i, layer in enumerate(final.layers)
    ]
    log.correlation = correlation_matrix(final.regularized_weight)
    if train.kind == DatasetKind.REGRESSION:
        log.per_task_explained_variance = explained_variance(
            predict(final, test), test.targets
        )

    name = _cell_name(method, size, seed)
    _write_metrics_csv(out_dir / f"{name}_metrics.csv", log)
    _write_summary_json(
        out_dir / f"{name}_summary.json", config, method, size, seed, train, log
    )
    _write_weights_npz(out_dir / f"{name}_weights.npz", state, train.kind)
    note = f"[adareg] {name}: done in {log.wall_seconds:.1f}s"
    if log.records:
        note += f" (final test metric {log.records[-1].test_metric:.4f})"
    print(note, file=sys.stderr)
    return name


def _write_metrics_csv(path: Path, log: MetricLog) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "epoch",
                "outer_iter",
                "train_loss",
                "train_objective",
                "test_loss",
                "train_metric",
                "test_metric",
            ]
        )
        for r in log.records:
            writer.writerow(
                [
                    r.epoch,
                    r.outer_iter,
                    repr(r.train_loss),
                    repr(r.train_objective),
                    repr(r.test_loss),
                    repr(r.train_metric),
                    repr(r.test_metric),
                ]
            )


def _write_summary_json(
    path: Path,
    config: ExperimentConfig,
    method: str,
    size: int | None,
    seed: int,
    train: Dataset,
    log: MetricLog,
) -> None:
    is_classification = train.kind == DatasetKind.CLASSIFICATION
    summary = {
        "schema": SUMMARY_SCHEMA,
        "method": method,
        "training_size": train.n if size is None else size,
        "seed": seed,
        "dataset_kind": train.kind,
        "metric_name": "accuracy" if is_classification else "explained_variance",
        "epochs": len(log.records),
        "final_train_loss": log.records[-1].train_loss if log.records else None,
        "final_test_loss": log.records[-1].test_loss if log.records else None,
        "final_train_metric": log.records[-1].train_metric if log.records else None,
        "final_test_metric": log.records[-1].test_metric if log.records else None,
        "spectrum_per_layer": log.spectrum_per_layer,
        "correlation": log.correlation.tolist()
        if log.correlation is not None
        else None,
    }
    if log.per_task_explained_variance is not None:
        summary["per_task_explained_variance"] = [
            float(x) for x in log.per_task_explained_variance
        ]
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_weights_npz(path: Path, state, dataset_kind: str) -> None:
    arrays = {"dataset_kind": np.array(dataset_kind)}
    for i, layer in enumerate(state.net.layers):
        arrays[f"weight_{i}"] = layer.weight
        arrays[f"bias_{i}"] = layer.bias
    arrays["regularized_layer_index"] = np.array(
        state.net.regularized_layer_index
    )
    if state.lam > 0.0:
        arrays["omega_r"] = state.precisions.omega_r.entries
        arrays["omega_c"] = state.precisions.omega_c.entries
        covs = state.precisions.to_prior()
        arrays["sigma_r"] = covs.row_cov.entries
        arrays["sigma_c"] = covs.col_cov.entries
    np.savez(path, **arrays)


def run_experiment(
    config: ExperimentConfig,
    jobs: int = 1,
    seed_override: tuple[int, ...] | None = None,
    output_override: str | None = None,
) -> int:
    """Run every (method, training size, seed) cell of the sweep.

    Returns 0 on success; raises AdaRegError subclasses on config, data, or
    divergence problems (the command-line wrapper turns those into non-zero
    exits).
    """
    seeds = seed_override if seed_override else config.seeds
    out_dir = Path(output_override or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = config.to_dict()
    resolved["seeds"] = list(seeds)
    if output_override:
        resolved["output_dir"] = str(out_dir)
    with open(out_dir / "resolved_config.json", "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")

    cells = [
        (method, size, seed)
        for method in config.methods
        for size in config.training_sizes
        for seed in seeds
    ]
    if jobs <= 1:
        for method, size, seed in cells:
            _run_cell(config, method, size, seed, out_dir)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_cell, config, method, size, seed, out_dir)
                for method, size, seed in cells
            ]
            for fut in futures:
                fut.result()
    print(f"[adareg] wrote {len(cells)} cells to {out_dir}", file=sys.stderr)
    return 0


def summarize(run_directory) -> Path:
    """Aggregate per-cell summaries into one CSV row per (method, size).

    Means and standard deviations (population) are over seeds; regression
    rows also get per-task explained-variance columns.
    """
    run_dir = Path(run_directory)
    paths = sorted(run_dir.glob("*_summary.json"))
    if not paths:
        raise EmptyDirectory(f"no *_summary.json files under {run_dir}")
    summaries = []
    for p in paths:
        with open(p) as f:
            s = json.load(f)
        if s.get("schema") != SUMMARY_SCHEMA:
            raise SchemaMismatch(f"{p}: schema {s.get('schema')!r}")
        summaries.append(s)

    metric_names = {s["metric_name"] for s in summaries}
    kinds = {s["dataset_kind"] for s in summaries}
    if len(metric_names) > 1 or len(kinds) > 1:
        raise SchemaMismatch(
            f"mixed logs: metric {sorted(metric_names)}, kinds {sorted(kinds)}"
        )
    num_tasks = None
    if kinds == {DatasetKind.REGRESSION}:
        task_counts = {
            len(s.get("per_task_explained_variance", [])) for s in summaries
        }
        if len(task_counts) > 1:
            raise SchemaMismatch(f"mixed task counts {sorted(task_counts)}")
        num_tasks = task_counts.pop()

    groups: dict[tuple[str, int], list[dict]] = {}
    for s in summaries:
        groups.setdefault((s["method"], s["training_size"]), []).append(s)

    out_path = run_dir / "summary.csv"
    header = ["method", "training_size", "n_seeds", "test_metric_mean", "test_metric_std"]
    if num_tasks:
        for t in range(num_tasks):
            header += [f"ev_task{t}_mean", f"ev_task{t}_std"]
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for method, size in sorted(groups):
            cells = groups[(method, size)]
            finals = np.array([c["final_test_metric"] for c in cells], dtype=float)
            row = [
                method,
                size,
                len(cells),
                repr(float(finals.mean())),
                repr(float(finals.std())),
            ]
            if num_tasks:
                per_task = np.array(
                    [c["per_task_explained_variance"] for c in cells], dtype=float
                )
                for t in range(num_tasks):
                    row += [
                        repr(float(per_task[:, t].mean())),
                        repr(float(per_task[:, t].std())),
                    ]
            writer.writerow(row)
    return out_path


def export_correlation(run_directory, layer_index: int) -> list[Path]:
    """Write the row-correlation matrix of one layer for every saved run.

    Reads each cell's weights NPZ; emits one labeled CSV per cell.
    """
    run_dir = Path(run_directory)
    weight_files = sorted(run_dir.glob("*_weights.npz"))
    if not weight_files:
        raise MissingWeights(f"no *_weights.npz files under {run_dir}")
    written = []
    for wf in weight_files:
        with np.load(wf) as z:
            key = f"weight_{layer_index}"
            if key not in z:
                raise MissingWeights(f"{wf}: no saved layer {layer_index}")
            w = z[key]
            kind = str(z["dataset_kind"])
        corr = correlation_matrix(w)
        prefix = "class" if kind == DatasetKind.CLASSIFICATION else "task"
        labels = [f"{prefix}_{i}" for i in range(corr.shape[0])]
        out = run_dir / (
            wf.name.replace("_weights.npz", f"_correlation_layer{layer_index}.csv")
        )
        with open(out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([""] + labels)
            for label, row in zip(labels, corr):
                writer.writerow([label] + [repr(float(x)) for x in row])
        written.append(out)
    return written


def _parse_seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(part) for part in text.split(",") if part != "")
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError("seed override must list ints >= 0")
    return seeds


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adareg",
        description="Adaptive-regularization experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config's full sweep")
    p_run.add_argument("config", help="path to the experiment config JSON")
    p_run.add_argument(
        "--seed-override",
        help="comma-separated seeds replacing the config's list",
    )
    p_run.add_argument(
        "--jobs", type=int, default=1, help="parallel worker processes"
    )
    p_run.add_argument("--output", help="output directory override")

    p_sum = sub.add_parser("summarize", help="aggregate a run directory")
    p_sum.add_argument("run_dir")

    p_exp = sub.add_parser(
        "export-correlation", help="export per-run row correlation matrices"
    )
    p_exp.add_argument("run_dir")
    p_exp.add_argument("--layer", type=int, required=True)

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("config")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = ExperimentConfig.from_file(args.config)
            override = (
                _parse_seed_list(args.seed_override)
                if args.seed_override
                else None
            )
            return run_experiment(
                config,
                jobs=args.jobs,
                seed_override=override,
                output_override=args.output,
            )
        if args.command == "summarize":
            out = summarize(args.run_dir)
            print(out)
            return 0
        if args.command == "export-correlation":
            for path in export_correlation(args.run_dir, args.layer):
                print(path)
            return 0
        if args.command == "validate":
            ExperimentConfig.from_file(args.config)
            print("config OK")
            return 0
    except AdaRegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
